"""Persist fitted models in the tensor container format.

Each model kind packs its parameter arrays under stable names plus a string
manifest carrying the constructor settings, so a saved file round-trips to
an estimator with identical predictions. Composite models nest their parts
under short name prefixes.
"""
from __future__ import annotations

import numpy as np

from .containers import read_container, write_container
from .dimred import MLAEReducer, PCAReducer
from .nn import ChannelNorm
from .operators import DeepONet, FNO2d, LatentDeepONet


def _grid_str(grid) -> str:
    return "" if grid is None else f"{grid[0]},{grid[1]}"


def _parse_grid(text: str):
    return None if text == "" else tuple(int(part) for part in text.split(","))


def _assign_parameters(params, tensors: dict, context: str):
    for p in params:
        if p.name not in tensors:
            raise ValueError(f"{context}: saved file is missing tensor '{p.name}'")
        stored = tensors[p.name]
        if stored.shape != p.data.shape:
            raise ValueError(
                f"{context}: tensor '{p.name}' has shape {stored.shape},"
                f" expected {p.data.shape}")
        p.data = stored


def _pack_pca(model):
    tensors = {
        "mean": model.mean_,
        "components": model.components_,
        "singular_values": model.singular_values_,
    }
    return tensors, {"d": str(model.d)}


def _unpack_pca(tensors, manifest):
    model = PCAReducer(d=int(manifest["d"]))
    model.mean_ = tensors["mean"]
    model.components_ = tensors["components"]
    model.singular_values_ = tensors["singular_values"]
    model.n_features_in_ = model.components_.shape[0]
    return model


def _pack_mlae(model):
    tensors = {"training_log": np.asarray(model.training_log_)}
    for p in model.encoder_.parameters() + model.decoder_.parameters():
        tensors[p.name] = p.data
    manifest = {
        "d": str(model.d),
        "widths": ",".join(str(w) for w in model.widths_),
        "n_features": str(model.n_features_in_),
        "epochs": str(model.epochs),
        "batch_size": str(model.batch_size),
        "lr": repr(float(model.lr)),
        "seed": str(model.seed),
    }
    return tensors, manifest


def _unpack_mlae(tensors, manifest):
    model = MLAEReducer(
        d=int(manifest["d"]),
        hidden_widths=[int(w) for w in manifest["widths"].split(",")],
        epochs=int(manifest["epochs"]),
        batch_size=int(manifest["batch_size"]),
        lr=float(manifest["lr"]),
        seed=int(manifest["seed"]),
    )
    n_features = int(manifest["n_features"])
    model._build(n_features)
    params = model.encoder_.parameters() + model.decoder_.parameters()
    _assign_parameters(params, tensors, "autoencoder")
    for p in params:
        p.node = None
    model.training_log_ = tensors["training_log"].tolist()
    model.n_features_in_ = n_features
    return model


def _norm_buffers(chain):
    out = {}
    for i, layer in enumerate(chain.layers):
        if isinstance(layer, ChannelNorm):
            out[f"norm{i}.mean"] = layer.running_mean
            out[f"norm{i}.var"] = layer.running_var
    return out


def _restore_norm_buffers(chain, tensors, context):
    for i, layer in enumerate(chain.layers):
        if isinstance(layer, ChannelNorm):
            try:
                layer.running_mean = tensors[f"norm{i}.mean"]
                layer.running_var = tensors[f"norm{i}.var"]
            except KeyError as exc:
                raise ValueError(f"{context}: saved file is missing tensor {exc}") from None


def _pack_deeponet(model):
    tensors = {"zeta": model.zeta_, "training_log": np.asarray(model.training_log_)}
    for p in model._parameters():
        tensors[p.name] = p.data
    tensors.update(_norm_buffers(model.branch_))
    manifest = {
        "p": str(model.p),
        "width": str(model.width),
        "branch": model.branch_kind_,
        "grid": _grid_str(model.grid_),
        "n_features": str(model.n_features_in_),
        "epochs": str(model.epochs),
        "batch_size": str(model.batch_size),
        "lr": repr(float(model.lr)),
        "seed": str(model.seed),
    }
    return tensors, manifest


def _unpack_deeponet(tensors, manifest):
    model = DeepONet(
        p=int(manifest["p"]),
        width=int(manifest["width"]),
        branch=manifest["branch"],
        grid=_parse_grid(manifest["grid"]),
        epochs=int(manifest["epochs"]),
        batch_size=int(manifest["batch_size"]),
        lr=float(manifest["lr"]),
        seed=int(manifest["seed"]),
    )
    n_features = int(manifest["n_features"])
    model._build(n_features)
    _assign_parameters(model._parameters(), tensors, "operator")
    _restore_norm_buffers(model.branch_, tensors, "operator")
    model.branch_.train(False)
    for p in model._parameters():
        p.node = None
    model.zeta_ = tensors["zeta"]
    model.training_log_ = tensors["training_log"].tolist()
    model.n_features_in_ = n_features
    return model


def _pack_fno2d(model):
    tensors = {"training_log": np.asarray(model.training_log_)}
    for p in model._parameters():
        tensors[p.name] = p.data
    manifest = {
        "d_v": str(model.d_v),
        "k_max": str(model.k_max),
        "n_layers": str(model.n_layers),
        "grid": _grid_str(model.grid_),
        "n_steps": str(model.n_steps_),
        "n_features": str(model.n_features_in_),
        "epochs": str(model.epochs),
        "batch_size": str(model.batch_size),
        "lr": repr(float(model.lr)),
        "seed": str(model.seed),
    }
    return tensors, manifest


def _unpack_fno2d(tensors, manifest):
    model = FNO2d(
        d_v=int(manifest["d_v"]),
        k_max=int(manifest["k_max"]),
        n_layers=int(manifest["n_layers"]),
        grid=_parse_grid(manifest["grid"]),
        epochs=int(manifest["epochs"]),
        batch_size=int(manifest["batch_size"]),
        lr=float(manifest["lr"]),
        seed=int(manifest["seed"]),
    )
    model.grid_ = _parse_grid(manifest["grid"])
    model._build(model.grid_[0])
    _assign_parameters(model._parameters(), tensors, "fno")
    for p in model._parameters():
        p.node = None
    model.training_log_ = tensors["training_log"].tolist()
    model.n_steps_ = int(manifest["n_steps"])
    model.n_features_in_ = int(manifest["n_features"])
    return model


def _pack_latent(model):
    r_kind, r_pack, _ = _BY_TYPE[type(model.reducer_)]
    o_kind, o_pack, _ = _BY_TYPE[type(model.operator_)]
    r_tensors, r_manifest = r_pack(model.reducer_)
    o_tensors, o_manifest = o_pack(model.operator_)
    tensors = {f"r.{k}": v for k, v in r_tensors.items()}
    tensors.update({f"o.{k}": v for k, v in o_tensors.items()})
    tensors["input_range"] = np.asarray(model.input_range_, dtype=np.float64)
    tensors["output_range"] = np.asarray(model.output_range_, dtype=np.float64)
    tensors["zeta"] = model.zeta_
    manifest = {f"r_{k}": v for k, v in r_manifest.items()}
    manifest.update({f"o_{k}": v for k, v in o_manifest.items()})
    manifest["reducer_kind"] = r_kind
    manifest["operator_kind"] = o_kind
    manifest["grid"] = _grid_str(model.grid_)
    manifest["n_features"] = str(model.n_features_in_)
    return tensors, manifest


def _unpack_latent(tensors, manifest):
    r_tensors = {k[2:]: v for k, v in tensors.items() if k.startswith("r.")}
    o_tensors = {k[2:]: v for k, v in tensors.items() if k.startswith("o.")}
    r_manifest = {k[2:]: v for k, v in manifest.items() if k.startswith("r_")}
    o_manifest = {k[2:]: v for k, v in manifest.items() if k.startswith("o_")}
    reducer = _BY_KIND[manifest["reducer_kind"]][1](r_tensors, r_manifest)
    operator = _BY_KIND[manifest["operator_kind"]][1](o_tensors, o_manifest)
    model = LatentDeepONet(reducer, operator)
    model.reducer_ = reducer
    model.operator_ = operator
    model.grid_ = _parse_grid(manifest["grid"])
    model.zeta_ = tensors["zeta"]
    model.input_range_ = tuple(tensors["input_range"])
    model.output_range_ = tuple(tensors["output_range"])
    model.n_features_in_ = int(manifest["n_features"])
    return model


_BY_TYPE = {
    PCAReducer: ("pca", _pack_pca, _unpack_pca),
    MLAEReducer: ("mlae", _pack_mlae, _unpack_mlae),
    DeepONet: ("deeponet", _pack_deeponet, _unpack_deeponet),
    FNO2d: ("fno2d", _pack_fno2d, _unpack_fno2d),
    LatentDeepONet: ("latent_deeponet", _pack_latent, _unpack_latent),
}
_BY_KIND = {kind: (pack, unpack) for kind, pack, unpack in _BY_TYPE.values()}


def save_model(model, path) -> None:
    """Write a fitted model to path; the kind is recorded in the manifest."""
    entry = _BY_TYPE.get(type(model))
    if entry is None:
        names = sorted(cls.__name__ for cls in _BY_TYPE)
        raise TypeError(f"cannot save {type(model).__name__}; supported: {names}")
    kind, pack, _ = entry
    try:
        tensors, manifest = pack(model)
    except AttributeError as exc:
        raise ValueError(f"model must be fitted before saving: {exc}") from None
    manifest["kind"] = kind
    write_container(path, tensors, manifest)


def load_model(path):
    """Rebuild a fitted model from a container written by save_model."""
    tensors, manifest = read_container(path)
    kind = manifest.get("kind", "")
    if kind not in _BY_KIND:
        raise ValueError(f"file does not hold a model (kind '{kind}');"
                         f" supported: {sorted(_BY_KIND)}")
    return _BY_KIND[kind][1](tensors, manifest)
