from .api import CatalogClient, build_router
from .store import Catalog, DatasetRecord, Organization, Resource, slugify

__all__ = ["Catalog", "CatalogClient", "DatasetRecord", "Organization", "Resource", "build_router", "slugify"]
