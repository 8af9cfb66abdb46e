#To initialize the models package
