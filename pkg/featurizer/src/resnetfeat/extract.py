"""Ten-crop ResNet-152 feature extraction.

Per image: resize so the shortest side is 256 (aspect ratio preserved),
take the four corner crops, the center crop, and the same five from the
horizontally mirrored image, run each through ResNet-152 with the
classification layer removed, and average the ten 2048-d activation
vectors into one row of the output file.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import models
from torchvision.transforms import functional as TF

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp", ".webp")
IMAGENET_MEAN = [0.485, 0.456, 0.406]
IMAGENET_STD = [0.229, 0.224, 0.225]
FEATURE_DIM = 2048


@dataclass
class FeatureJob:
    image_dir: Path
    output_path: Path
    crop_size: int = 224
    resize_short: int = 256
    model: str = "resnet152"
    weights: str = "imagenet"  # "imagenet" or "none" (untrained, for tests)
    batch_size: int = 10
    seed: int = 0  # initialization seed, relevant only with weights="none"


def build_model(job: FeatureJob) -> torch.nn.Module:
    if job.model != "resnet152":
        raise ValueError(f"unsupported model tag {job.model!r}")
    if job.weights == "imagenet":
        weights = models.ResNet152_Weights.IMAGENET1K_V1
    elif job.weights == "none":
        torch.manual_seed(job.seed)
        weights = None
    else:
        raise ValueError(f"unsupported weights tag {job.weights!r}")
    net = models.resnet152(weights=weights)
    net.fc = torch.nn.Identity()  # keep the penultimate 2048-d activations
    net.eval()
    return net


def ten_crops(image: Image.Image, resize_short: int,
              crop_size: int) -> torch.Tensor:
    """Normalized crop batch [10, 3, crop, crop]; crops 6-10 come from the
    mirrored image in the same corner/center order as crops 1-5."""
    img = image.convert("RGB")
    if min(img.size) != resize_short:
        img = TF.resize(img, resize_short)
    crops = TF.ten_crop(img, crop_size)
    batch = torch.stack([TF.to_tensor(c) for c in crops])
    return TF.normalize(batch, IMAGENET_MEAN, IMAGENET_STD)


def crop_features(net: torch.nn.Module, image: Image.Image,
                  resize_short: int = 256, crop_size: int = 224) -> np.ndarray:
    """Per-crop feature matrix [10, 2048] (exposed for the symmetry checks)."""
    batch = ten_crops(image, resize_short, crop_size)
    with torch.no_grad():
        feats = net(batch)
    return feats.numpy().astype(np.float64)


def image_features(net: torch.nn.Module, image: Image.Image,
                   resize_short: int = 256, crop_size: int = 224) -> np.ndarray:
    return crop_features(net, image, resize_short, crop_size).mean(axis=0)


def list_images(image_dir: Path) -> list[Path]:
    paths = [p for p in sorted(Path(image_dir).iterdir())
             if p.suffix.lower() in IMAGE_EXTENSIONS]
    if not paths:
        raise FileNotFoundError(f"no images found under {image_dir}")
    return paths


def extract_features(job: FeatureJob) -> Path:
    """Run the job and write the '#dim=2048' TSV; returns the output path.

    Unreadable images are skipped with a warning; the job fails only when
    no image could be processed.
    """
    net = build_model(job)
    paths = list_images(job.image_dir)
    rows: list[tuple[str, np.ndarray]] = []
    for path in paths:
        try:
            with Image.open(path) as img:
                vec = image_features(net, img, job.resize_short, job.crop_size)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            continue
        rows.append((path.stem, vec))
    if not rows:
        raise RuntimeError("no image could be processed")
    out = Path(job.output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        f.write(f"#dim={FEATURE_DIM}\n")
        for image_id, vec in rows:
            f.write(image_id + "\t" + " ".join(f"{v:.9g}" for v in vec) + "\n")
    log.info("wrote %d feature rows to %s", len(rows), out)
    return out
