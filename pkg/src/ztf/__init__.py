"""Zero trust federation testbed.

Relying parties decide every access request from federated identity plus
federated contexts, with all context sharing gated by a user-controlled
authorization server.
"""

__version__ = "0.1.0"
