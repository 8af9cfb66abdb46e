import logging
import sys

from controllers.cli_app import CliApp


def main() -> None:
    """
    Entry point of the momglm command line.
    """
    logging.basicConfig(level=logging.INFO, format="[%(levelname)s] %(message)s", stream=sys.stderr)
    try:
        code = CliApp().run(sys.argv[1:])
    except KeyboardInterrupt:
        print("Interrupted.", file=sys.stderr)
        sys.exit(130)
    sys.exit(code)


if __name__ == "__main__":
    main()
