"""FastAPI service layer wrapping the core federation objects."""

from .authz_api import create_authz_app
from .cap_api import create_cap_app
from .idp_api import create_idp_app
from .rp_api import create_rp_app

__all__ = ["create_authz_app", "create_cap_app", "create_idp_app", "create_rp_app"]
