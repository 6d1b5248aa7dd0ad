def load_entries(path):
    """Read the config file at path and return its entries with normalized keys."""
    text = read_text(path)
    entries = parse_config(text)
    return {normalize_key(key): value for key, value in entries.items()}
