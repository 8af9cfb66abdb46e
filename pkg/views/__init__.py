#To initialize views as a package.
