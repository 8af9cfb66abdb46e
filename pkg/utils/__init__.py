#To initialize utils as a package.
