"""Dump per-layer activations (raw filter maps, before any averaging) plus
labels and optional image tensors as a manifest the toolkit consumes directly.

Layout written per layer: clean and noisy .pidx tensors of shape
[n_s, f, h_rep, w_rep] (dense outputs become [n_s, f, 1, 1]). The manifest
also records the representation layer index used for clustering.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .hooks import ActivationRecorder
from .pidx import read_tensor, write_tensor

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class DumpError(ValueError):
    pass


@dataclass(frozen=True)
class DumpManifest:
    model: str
    n_s: int
    classes: int
    layers: list          # {"name", "shape", "clean", "noisy"}
    representation_layer: int
    labels: str
    images_clean: str = ""
    images_noisy: str = ""
    snapshots: list = field(default_factory=list)
    log: str = ""

    def to_dict(self):
        d = {"model": self.model, "n_s": self.n_s, "classes": self.classes,
             "layers": self.layers, "representation_layer": self.representation_layer,
             "labels": self.labels}
        if self.images_clean:
            d["images_clean"] = self.images_clean
            d["images_noisy"] = self.images_noisy
        if self.snapshots:
            d["snapshots"] = self.snapshots
        if self.log:
            d["log"] = self.log
        return d


def load_image_folder(path):
    """[n, h, w, c] float array in [0, 1] from a folder of images, name-sorted.

    Accepts common raster formats (via Pillow) and .pidx tensors. Labels come
    from a leading integer in each file name ("3_sample07.png" -> 3); files
    without one get label 0.
    """
    from PIL import Image

    folder = Path(path)
    files = sorted(p for p in folder.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES + (".pidx",))
    if not files:
        raise DumpError(f"no images found in {folder}")
    images, labels = [], []
    for p in files:
        if p.suffix == ".pidx":
            arr = read_tensor(p).astype(np.float64)
            if arr.ndim == 2:
                arr = arr[..., None]
        else:
            arr = np.asarray(Image.open(p), dtype=np.float64) / 255.0
            if arr.ndim == 2:
                arr = arr[..., None]
        images.append(arr)
        head = p.stem.split("_", 1)[0]
        labels.append(int(head) if head.isdigit() else 0)
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise DumpError(f"images disagree on shape: {sorted(shapes)}")
    return np.stack(images), np.array(labels, dtype=np.int64)


def _to_batch(images) -> torch.Tensor:
    # [n, h, w, c] -> NCHW float32
    arr = np.asarray(images, dtype=np.float32)
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def _as_maps(act: np.ndarray) -> np.ndarray:
    if act.ndim == 4:
        return act
    if act.ndim == 2:
        return act[..., None, None]
    raise DumpError(f"cannot dump activation of shape {act.shape}")


def dump_activations(model, clean_images, noisy_images, layer_names, labels,
                     out_dir, model_name="model", representation_layer=None,
                     include_images=True) -> Path:
    """Hook the named layers, run one eval forward per distribution, write
    everything bit-exact, and return the manifest path.

    clean_images/noisy_images are [n, h, w, c] arrays in [0, 1] (use
    load_image_folder for folders). representation_layer is an index into
    layer_names; default is the last requested layer.
    """
    clean = np.asarray(clean_images, dtype=np.float64)
    noisy = np.asarray(noisy_images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if clean.shape != noisy.shape:
        raise DumpError(f"clean {clean.shape} vs noisy {noisy.shape}")
    if clean.shape[0] != labels.shape[0]:
        raise DumpError("labels do not match the image count")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with ActivationRecorder(model, layer_names) as rec:
        acts_clean = rec.run(_to_batch(clean))
        acts_noisy = rec.run(_to_batch(noisy))

    layer_records = []
    for j, name in enumerate(layer_names):
        ca = _as_maps(acts_clean[name])
        na = _as_maps(acts_noisy[name])
        if ca.shape != na.shape:
            raise DumpError(f"layer {name}: clean {ca.shape} vs noisy {na.shape}")
        cf, nf = f"layer{j:02d}_clean.pidx", f"layer{j:02d}_noisy.pidx"
        write_tensor(out / cf, ca)
        write_tensor(out / nf, na)
        layer_records.append({"name": name, "shape": list(ca.shape[1:]),
                              "clean": cf, "noisy": nf})

    write_tensor(out / "labels.pidx", labels.astype(np.float64))
    rep = len(layer_names) - 1 if representation_layer is None else representation_layer
    if not 0 <= rep < len(layer_names):
        raise DumpError(f"representation_layer {rep} out of range")

    img_c = img_n = ""
    if include_images:
        img_c, img_n = "images_clean.pidx", "images_noisy.pidx"
        write_tensor(out / img_c, clean)
        write_tensor(out / img_n, noisy)

    manifest = DumpManifest(model=model_name, n_s=int(clean.shape[0]),
                            classes=int(labels.max()) + 1, layers=layer_records,
                            representation_layer=rep, labels="labels.pidx",
                            images_clean=img_c, images_noisy=img_n)
    path = out / "dump.json"
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    return path
