"""Scene ingestion for Blender, LLFF and DTU layouts plus a procedural toy scene."""

from __future__ import annotations

import inspect

from ..errors import ConfigurationError
from .blender import load_blender_scene
from .bundle import Camera, SceneBundle, UnseenSource, View, load_metadata
from .dtu import load_dtu_scene
from .io import load_depth_map, read_pfm, write_pfm
from .llff import load_llff_scene
from .toy import make_toy_scene

DATASETS = ("blender", "llff", "dtu", "toy")


def load_scene(dataset: str, path=None, ref_view: int | None = None, patch_size=None, **options) -> SceneBundle:
    """Dispatch to the loader for ``dataset``; ``None`` arguments keep loader defaults."""
    kw = dict(options)
    if patch_size is not None:
        kw["patch_size"] = tuple(patch_size)
    loaders = {"toy": make_toy_scene, "blender": load_blender_scene, "llff": load_llff_scene,
               "dtu": load_dtu_scene}
    if dataset not in loaders:
        raise ConfigurationError(f"unknown dataset {dataset!r}; expected one of {DATASETS}")
    loader = loaders[dataset]
    accepted = set(inspect.signature(loader).parameters) - {"path", "ref_view_id"}
    unknown = sorted(set(kw) - accepted)
    if unknown:
        raise ConfigurationError(f"scene options {unknown} are not understood by the {dataset} loader; "
                                 f"accepted: {sorted(accepted)}")
    if dataset == "toy":
        return loader(**kw)
    if path is None:
        raise ConfigurationError(f"dataset {dataset!r} needs a scene path")
    if ref_view is not None:
        kw["ref_view_id"] = int(ref_view)
    return loader(path, **kw)


__all__ = [
    "DATASETS", "Camera", "SceneBundle", "UnseenSource", "View", "load_blender_scene", "load_depth_map",
    "load_dtu_scene", "load_llff_scene", "load_metadata", "load_scene", "make_toy_scene", "read_pfm", "write_pfm",
]
