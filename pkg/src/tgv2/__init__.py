"""Second-order total generalized variation for linear inverse imaging problems."""
