"""Scenario harness: boots a loopback federation and scripts the use cases."""
