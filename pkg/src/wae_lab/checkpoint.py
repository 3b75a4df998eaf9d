"""Bit-exact checkpoint container.

Layout: one magic line, one line of canonical JSON (config text, epoch,
architecture, array table, optimizer scalars, RNG states, trace), then the
concatenated little-endian float64 payload.  No timestamps, so identical
runs give identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import DataError
from .models import AutoEncoderModel, EpochRecord, Trainer, TrainingTrace
from .tensor import MLP, AdamState, DenseLayer, Tensor
from .divergence import LatentDiscriminator

MAGIC = b"WAELAB-CKPT 1\n"


def _mlp_meta(mlp: MLP) -> dict:
    return {"dims": mlp.dims, "activations": mlp.activations}


def _mlp_from(meta: dict, arrays: list[np.ndarray]) -> MLP:
    layers = []
    for k, act in enumerate(meta["activations"]):
        layers.append(DenseLayer(Tensor(arrays[2 * k], True), Tensor(arrays[2 * k + 1], True), act))
    return MLP(layers)


@dataclass
class Checkpoint:
    config: RunConfig
    epoch: int
    model: AutoEncoderModel
    disc: LatentDiscriminator | None = None
    optimizers: dict = field(default_factory=dict)
    rng_states: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    penalty_weight: float = 1.0
    pretrained: bool = False


def save_checkpoint(path, trainer: Trainer) -> None:
    arrays: list[tuple[str, np.ndarray]] = []
    for i, p in enumerate(trainer.model.encoder.parameters()):
        arrays.append((f"encoder/{i}", p.values))
    for i, p in enumerate(trainer.model.decoder.parameters()):
        arrays.append((f"decoder/{i}", p.values))
    if trainer.disc is not None:
        for i, p in enumerate(trainer.disc.parameters()):
            arrays.append((f"disc/{i}", p.values))
    optimizers = {}
    for name, opt in (("model", trainer.opt), ("disc", trainer.disc_opt)):
        if opt is None:
            continue
        st = opt.state
        optimizers[name] = {"alpha": st.alpha, "beta1": st.beta1, "beta2": st.beta2,
                            "epsilon": st.epsilon, "step": st.step}
        arrays.append((f"{name}_opt/m", st.m))
        arrays.append((f"{name}_opt/v", st.v))

    table, offset = [], 0
    for name, arr in arrays:
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = {
        "config": trainer.config.to_text(),
        "epoch": trainer.epoch,
        "encoder_kind": trainer.model.encoder_kind,
        "encoder": _mlp_meta(trainer.model.encoder),
        "decoder": _mlp_meta(trainer.model.decoder),
        "disc": None if trainer.disc is None else {**_mlp_meta(trainer.disc.network),
                                                   "add_log_prior": trainer.disc.add_log_prior,
                                                   "sigma_z2": trainer.disc.sigma_z2},
        "optimizers": optimizers,
        "rng": {k: g.bit_generator.state for k, g in sorted(trainer.streams.items())},
        "pretrained": trainer.pretrained,
        "penalty_weight": trainer.trace.penalty_weight,
        "trace": [[r.epoch, r.recon, r.penalty, r.total, r.disc_loss] for r in trainer.trace.records],
        "arrays": table,
    }
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    blob = MAGIC + json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n" + payload
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes() if Path(path).exists() else None
    if blob is None:
        raise DataError(f"no such checkpoint: {path}")
    if not blob.startswith(MAGIC):
        raise DataError(f"{path} is not a checkpoint file")
    end = blob.index(b"\n", len(MAGIC))
    header = json.loads(blob[len(MAGIC):end])
    payload = np.frombuffer(blob[end + 1:], dtype="<f8")
    arrays = {}
    for entry in header["arrays"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        chunk = payload[entry["offset"]:entry["offset"] + size]
        if chunk.size != size:
            raise DataError(f"checkpoint payload truncated at array {entry['name']}")
        arrays[entry["name"]] = chunk.reshape(entry["shape"]).astype(np.float64)

    def group(prefix):
        keys = sorted((k for k in arrays if k.startswith(prefix + "/")), key=lambda k: int(k.split("/")[1]))
        return [arrays[k] for k in keys]

    encoder = _mlp_from(header["encoder"], group("encoder"))
    decoder = _mlp_from(header["decoder"], group("decoder"))
    model = AutoEncoderModel(encoder, decoder, header["encoder_kind"])
    disc = None
    if header["disc"] is not None:
        d = header["disc"]
        disc = LatentDiscriminator(_mlp_from(d, group("disc")), d["add_log_prior"], d["sigma_z2"])
    optimizers = {}
    for name, sc in header["optimizers"].items():
        optimizers[name] = AdamState(sc["alpha"], sc["beta1"], sc["beta2"], sc["epsilon"], sc["step"],
                                     arrays[f"{name}_opt/m"], arrays[f"{name}_opt/v"])
    trace = [EpochRecord(e, r, p, t, 0.0, dl) for e, r, p, t, dl in header["trace"]]
    return Checkpoint(RunConfig.from_text(header["config"]), header["epoch"], model, disc,
                      optimizers, header["rng"], trace, header["penalty_weight"], header["pretrained"])


def restore_trainer(ckpt: Checkpoint, dataset) -> Trainer:
    """Rebuild a trainer that continues exactly where the checkpoint stopped."""
    trainer = Trainer(dataset, ckpt.config, model=ckpt.model, disc=ckpt.disc,
                      strict=ckpt.config.lambda_ > 0 or ckpt.config.penalty_kind == "none")
    for name, state in ckpt.optimizers.items():
        opt = trainer.opt if name == "model" else trainer.disc_opt
        opt.state = state
    for name, state in ckpt.rng_states.items():
        trainer.streams[name].bit_generator.state = state
    trainer.epoch = ckpt.epoch
    trainer.pretrained = ckpt.pretrained
    trainer.trace = TrainingTrace(ckpt.penalty_weight, list(ckpt.trace))
    return trainer
