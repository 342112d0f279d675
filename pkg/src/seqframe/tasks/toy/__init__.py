"""Synthetic copy and reverse tasks."""
