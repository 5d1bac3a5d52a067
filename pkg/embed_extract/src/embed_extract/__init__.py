"""Offline embedding extraction: image folders to EMBVIEW1 view files."""

from .embview import EmbviewError, decode, encode
from .extract import ExtractError, ExtractJob, extract, list_images, read_label_file
from .registry import (REGISTRY, Backbone, BackboneUnavailable,
                       available_backbones, build_backbone)

__version__ = "0.1.0"
