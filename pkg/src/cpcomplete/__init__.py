"""Completely positive completion of partial matrices via moment relaxations."""
