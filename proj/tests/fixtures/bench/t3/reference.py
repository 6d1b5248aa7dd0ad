def clamp(value, low, high):
    """Limit a number to the closed interval [low, high]."""
    def _bound(v):
        return max(low, min(high, v))
    return _bound(value)
