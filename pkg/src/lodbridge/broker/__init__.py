from .api import BrokerClient, build_router
from .core import ContextBroker, DeliveryReport, Dispatcher, Notification, Predicate, Subscription

__all__ = ["BrokerClient", "ContextBroker", "DeliveryReport", "Dispatcher", "Notification",
           "Predicate", "Subscription", "build_router"]
