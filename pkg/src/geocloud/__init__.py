"""geocloud: a discrete-time simulator and controller library for geo-distributed IaaS clouds."""
from . import cloudmodel, controllers, economics, geotemporal, simulator
from .errors import GeoCloudError

__version__ = "0.1.0"
__all__ = ["cloudmodel", "controllers", "economics", "geotemporal", "simulator", "GeoCloudError"]
