"""Offline ten-crop ResNet-152 feature extraction for paired-corpus training."""

from .extract import (FEATURE_DIM, FeatureJob, build_model, crop_features,
                      extract_features, image_features, ten_crops)

__all__ = ["FEATURE_DIM", "FeatureJob", "build_model", "crop_features",
           "extract_features", "image_features", "ten_crops"]
