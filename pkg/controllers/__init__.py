#To initialize controllers as a package
