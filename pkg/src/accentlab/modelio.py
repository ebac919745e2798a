"""Model archives: one directory per model.

`model.json` holds the structure (kind, dims, streams, classes,
activations); every weight matrix and bias vector is an EMB1 file next
to it. Biases are stored as 1-row matrices. EMB1 payloads are float32,
so saving rounds the weights once; after that, save -> load -> save is
byte-identical.
"""

import json
import os

import numpy as np

from . import numkit as nk
from .aid import FrameEncoder, FusionModel
from .corpus import read_embedding_matrix, write_embedding_matrix
from .ctc import CtcModel, SymbolTable

_FORMAT = 1


def _net_spec(net):
    return {"dims": [net.in_dim] + [layer.w.shape[0] for layer in net.layers],
            "activations": [layer.activation for layer in net.layers]}


def _save_net(net, out_dir, prefix):
    files = []
    for k, layer in enumerate(net.layers):
        wf, bf = f"{prefix}{k}.w.emb1", f"{prefix}{k}.b.emb1"
        write_embedding_matrix(os.path.join(out_dir, wf), layer.w)
        write_embedding_matrix(os.path.join(out_dir, bf), layer.b)
        files.append({"w": wf, "b": bf})
    return files


def _load_net(spec, files, base):
    layers = []
    for entry, activation in zip(files, spec["activations"]):
        w = read_embedding_matrix(os.path.join(base, entry["w"]))
        b = read_embedding_matrix(os.path.join(base, entry["b"]))[0]
        layers.append(nk.DenseLayer(w, b, activation))
    net = nk.DenseNet(layers)
    want = spec["dims"]
    got = [net.in_dim] + [layer.w.shape[0] for layer in net.layers]
    if want != got:
        raise ValueError(f"archive dims {want} do not match payload {got}")
    return net


def save_model(model, out_dir):
    """Write a model archive; returns the model.json path."""
    os.makedirs(out_dir, exist_ok=True)
    if isinstance(model, FusionModel):
        header = {"format": _FORMAT, "kind": "fusion",
                  "streams": list(model.streams),
                  "classes": list(model.classes),
                  "dims": dict(model.dims),
                  "net": _net_spec(model.net),
                  "files": _save_net(model.net, out_dir, "net.")}
    elif isinstance(model, FrameEncoder):
        header = {"format": _FORMAT, "kind": "frame_encoder",
                  "classes": list(model.classes),
                  "frame_net": _net_spec(model.frame_net),
                  "proj_net": _net_spec(model.proj_net),
                  "head": _net_spec(model.head),
                  "files": {
                      "frame_net": _save_net(model.frame_net, out_dir, "frame."),
                      "proj_net": _save_net(model.proj_net, out_dir, "proj."),
                      "head": _save_net(model.head, out_dir, "head."),
                  }}
    elif isinstance(model, CtcModel):
        header = {"format": _FORMAT, "kind": "ctc",
                  "symbols": model.table.symbols,
                  "net": _net_spec(model.net),
                  "files": _save_net(model.net, out_dir, "net.")}
    else:
        raise TypeError(f"cannot archive {type(model).__name__}")
    path = os.path.join(out_dir, "model.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_model(archive_dir):
    path = os.path.join(archive_dir, "model.json")
    if not os.path.exists(path):
        raise ValueError(f"{archive_dir}: no model.json")
    with open(path, encoding="utf-8") as fh:
        header = json.load(fh)
    if header.get("format") != _FORMAT:
        raise ValueError(f"{path}: unsupported format {header.get('format')}")
    kind = header.get("kind")
    if kind == "fusion":
        net = _load_net(header["net"], header["files"], archive_dir)
        return FusionModel(net, header["streams"], header["classes"],
                           header["dims"])
    if kind == "frame_encoder":
        files = header["files"]
        return FrameEncoder(
            frame_net=_load_net(header["frame_net"], files["frame_net"],
                                archive_dir),
            proj_net=_load_net(header["proj_net"], files["proj_net"],
                               archive_dir),
            head=_load_net(header["head"], files["head"], archive_dir),
            classes=header["classes"])
    if kind == "ctc":
        net = _load_net(header["net"], header["files"], archive_dir)
        return CtcModel(SymbolTable(header["symbols"]), net)
    raise ValueError(f"{path}: unknown model kind {kind!r}")
