from .model import BaselineModel, Observation, Prediction, UnknownStation, hour_of_week, train_baseline
from .service import ConsumerService, StationSnapshot, build_router, collect_latest

__all__ = ["BaselineModel", "ConsumerService", "Observation", "Prediction", "StationSnapshot", "UnknownStation",
           "build_router", "collect_latest", "hour_of_week", "train_baseline"]
