def fetch_many(self, keys):
    """Return the stored values for each key in order, skipping missing keys."""
    values = []
    for key in keys:
        value = self.fetch(key)
        if value is not None:
            values.append(value)
    return values
