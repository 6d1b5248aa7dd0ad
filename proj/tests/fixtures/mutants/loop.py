def load_entries(path):
    while True:
        pass
