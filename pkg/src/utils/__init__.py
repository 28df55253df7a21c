"""Logging, error tracking, seeding and serialization helpers."""

from .seeding import derive_seed, make_rng

__all__ = ["derive_seed", "make_rng"]
