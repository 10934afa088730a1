"""Retinal fundus data pipeline: vessel morphology, lesion boxes, record assembly,
conversation corpora and evaluation scoring."""

__version__ = "0.1.0"
