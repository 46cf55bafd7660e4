from .devices import DeviceRegistry, ingest_device_measure
from .pipeline import Pipeline, PipelineRunner, RunReport, load_pipeline, run_pipeline
from .publication import PublicationParams, generate_catalog_metadata, publish_dataset_to_catalog
from .records import FlowRecord
from .transform import TransformSpec, apply_transform, load_spec

__all__ = ["DeviceRegistry", "FlowRecord", "Pipeline", "PipelineRunner", "PublicationParams", "RunReport",
           "TransformSpec", "apply_transform", "generate_catalog_metadata", "ingest_device_measure",
           "load_pipeline", "load_spec", "publish_dataset_to_catalog", "run_pipeline"]
