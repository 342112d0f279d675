"""Toy configurations; importing a module registers its models."""
