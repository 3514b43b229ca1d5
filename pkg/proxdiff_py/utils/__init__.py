"""Time-function parsing and per-chain random streams."""
