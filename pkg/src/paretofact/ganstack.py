"""Encoder/decoder generator, shared-trunk critic + attribute classifier,
audited target model, their training losses and loops.

Images travel through the networks flattened to ``(batch, pixels)``.
"""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import cgmf
from . import numcore as nc
from .data import AnnotatedDataset, SplitPlan
from .errors import ContractError, DimensionError, FormatError, TrainingError
from .numcore import Tensor

CONDITIONAL = "conditional"
NON_CONDITIONAL = "non_conditional"
HEADS = ("linear", "sigmoid", "softmax", "hidden")
ALPHA = 0.2


class Mlp:
    """Dense network: leaky-ReLU hidden layers, then the chosen output head.

    The ``hidden`` head applies leaky-ReLU after the last layer as well, which
    is what a trunk feeding several heads wants.
    """

    def __init__(self, sizes: Sequence[int], head: str = "linear", rng: np.random.Generator | None = None,
                 init: str = "he", name: str = "mlp"):
        if len(sizes) < 2 or any(int(s) <= 0 for s in sizes):
            raise ContractError(f"layer sizes must be >= 2 positive integers, got {list(sizes)}")
        if head not in HEADS:
            raise ContractError(f"unknown head {head!r}")
        self.sizes = [int(s) for s in sizes]
        self.head = head
        self.name = name
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if init == "zeros":
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, fan_out))
            self.weights.append(Tensor(w, requires_grad=True, name=f"{name}.W{i}"))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.b{i}"))

    @property
    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise DimensionError(f"{self.name}: expected input (batch, {self.sizes[0]}), got {x.shape}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = nc.add_bias(nc.matmul(x, w), b)
            if i < last or self.head == "hidden":
                x = nc.leaky_relu(x, ALPHA)
        if self.head == "sigmoid":
            x = nc.sigmoid(x)
        elif self.head == "softmax":
            x = nc.softmax(x)
        return x

    def forward_numpy(self, x: np.ndarray) -> np.ndarray:
        with nc.no_grad():
            return self(Tensor(x)).data

    def spec(self) -> dict:
        return {"sizes": self.sizes, "head": self.head, "alpha": ALPHA}


@dataclass
class LossWeights:
    lambda1: float = 10.0
    lambda2: float = 1.0
    lambda3: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ContractError(f"loss weight {k} must be >= 0, got {v}")


@dataclass
class ModelBundle:
    """Generator encoder/decoder, critic with plausibility head, attribute classifier.

    ``trunk`` is shared by the critic heads and the attribute head, so a C-loss
    update moves the same parameter storage the critic reads.
    """

    encoder: Mlp
    decoder: Mlp
    trunk: Mlp
    critic_head: Mlp
    plaus_head: Mlp
    attr_head: Mlp
    image_shape: tuple[int, ...]
    n_attributes: int
    latent: int
    hidden: tuple[int, ...]
    mode: str = CONDITIONAL
    seed: int = 0

    @property
    def pixels(self) -> int:
        return int(np.prod(self.image_shape))

    def networks(self) -> dict[str, Mlp]:
        return {
            "encoder": self.encoder, "decoder": self.decoder, "trunk": self.trunk,
            "critic_head": self.critic_head, "plaus_head": self.plaus_head, "attr_head": self.attr_head,
        }

    @property
    def generator_params(self) -> list[Tensor]:
        return self.encoder.params + self.decoder.params

    @property
    def discriminator_params(self) -> list[Tensor]:
        return self.trunk.params + self.critic_head.params + self.plaus_head.params + self.attr_head.params

    @property
    def clipped_params(self) -> list[Tensor]:
        return self.trunk.params + self.critic_head.params

    @property
    def params(self) -> list[Tensor]:
        return self.generator_params + self.discriminator_params

    def named_params(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.params}

    # forward pieces
    def critic(self, x: Tensor) -> Tensor:
        return self.critic_head(self.trunk(x))

    def plausibility(self, x: Tensor) -> Tensor:
        return self.plaus_head(self.trunk(x))

    def classify(self, x: Tensor) -> Tensor:
        return self.attr_head(self.trunk(x))


def build_bundle(image_shape: Sequence[int], n_attributes: int, latent: int = 32,
                 hidden: Sequence[int] = (256, 64), mode: str = CONDITIONAL, seed: int = 0,
                 init: str = "he") -> ModelBundle:
    if mode not in (CONDITIONAL, NON_CONDITIONAL):
        raise ContractError(f"unknown mode {mode!r}")
    if n_attributes < 1:
        raise ContractError("n_attributes must be >= 1")
    rng = np.random.default_rng(seed)
    image_shape = tuple(int(s) for s in image_shape)
    P = int(np.prod(image_shape))
    hidden = tuple(int(h) for h in hidden)
    dec_in = latent + (n_attributes if mode == CONDITIONAL else 0)
    feat = hidden[-1]
    return ModelBundle(
        encoder=Mlp([P, *hidden, latent], "linear", rng, init, "encoder"),
        decoder=Mlp([dec_in, *reversed(hidden), P], "sigmoid", rng, init, "decoder"),
        trunk=Mlp([P, *hidden], "hidden", rng, init, "trunk"),
        critic_head=Mlp([feat, 1], "linear", rng, init, "critic_head"),
        plaus_head=Mlp([feat, 1], "sigmoid", rng, init, "plaus_head"),
        attr_head=Mlp([feat, n_attributes], "sigmoid", rng, init, "attr_head"),
        image_shape=image_shape, n_attributes=n_attributes, latent=latent, hidden=hidden,
        mode=mode, seed=seed,
    )


def _flatten(bundle: ModelBundle, x) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    P = bundle.pixels
    if x.shape == bundle.image_shape:
        return nc.reshape(x, (1, P))
    if x.data.ndim == 2 and x.shape[1] == P:
        return x
    if x.shape[1:] == bundle.image_shape:
        return nc.reshape(x, (x.shape[0], P))
    raise DimensionError(f"expected images of shape {bundle.image_shape}, got {x.shape}")


def _attr_rows(bundle: ModelBundle, b, batch: int) -> Tensor:
    if not isinstance(b, Tensor):
        b = Tensor(b)
    if b.data.ndim == 1:
        b = nc.reshape(b, (1, b.shape[0]))
    if b.shape[1] != bundle.n_attributes:
        raise DimensionError(f"attribute vector length {b.shape[1]} != {bundle.n_attributes}")
    if b.shape[0] != batch:
        if b.shape[0] != 1:
            raise DimensionError(f"{b.shape[0]} attribute rows for a batch of {batch}")
        b = Tensor(np.repeat(b.data, batch, axis=0))
    return b


def encode(bundle: ModelBundle, x) -> Tensor:
    return bundle.encoder(_flatten(bundle, x))


def decode(bundle: ModelBundle, z: Tensor, b=None) -> Tensor:
    """Decoder output, flattened, in [0, 1]. ``b`` is ignored without conditioning."""
    if not isinstance(z, Tensor):
        z = Tensor(z)
    if z.data.ndim == 1:
        z = nc.reshape(z, (1, z.shape[0]))
    if bundle.mode == CONDITIONAL:
        if b is None:
            raise DimensionError("conditional decoder needs an attribute vector")
        z = nc.concat(z, _attr_rows(bundle, b, z.shape[0]))
    return bundle.decoder(z)


def generate(bundle: ModelBundle, x, b=None) -> Tensor:
    return decode(bundle, encode(bundle, x), b)


# ---------------------------------------------------------------- losses

def loss_rec(x, x_rec) -> Tensor:
    """Per-pixel mean absolute error, averaged over the batch."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    x_rec = x_rec if isinstance(x_rec, Tensor) else Tensor(x_rec)
    if x.shape != x_rec.shape:
        raise DimensionError(f"loss_rec: {x.shape} vs {x_rec.shape}")
    return nc.mean(nc.abs_(nc.sub(x, x_rec)))


def loss_att_g(b, b_hat: Tensor) -> Tensor:
    return nc.binary_cross_entropy(b, b_hat)


def loss_att_c(a, a_hat: Tensor) -> Tensor:
    return nc.binary_cross_entropy(a, a_hat)


def loss_adv_g(d_scores) -> Tensor:
    d_scores = d_scores if isinstance(d_scores, Tensor) else Tensor(d_scores)
    return nc.scale(nc.mean(d_scores), -1.0)


def loss_adv_d(d_real: Tensor, d_fake: Tensor) -> Tensor:
    return nc.sub(nc.mean(d_fake), nc.mean(d_real))


def loss_plausibility(p_real: Tensor, p_fake: Tensor) -> Tensor:
    """Real-vs-fake binary cross-entropy for the bounded plausibility head."""
    real = nc.binary_cross_entropy(np.ones(p_real.shape), p_real)
    fake = nc.binary_cross_entropy(np.zeros(p_fake.shape), p_fake)
    return nc.add(real, fake)


def compose_generator_loss(weights: LossWeights, rec: Tensor, adv: Tensor, att: Tensor | None = None) -> Tensor:
    """lambda1*rec + lambda2*att + adv; without ``att`` this is the non-conditional form."""
    if min(weights.lambda1, weights.lambda2, weights.lambda3) < 0:
        raise ContractError("loss weights must be non-negative")
    out = nc.add(nc.scale(rec, weights.lambda1), adv)
    if att is not None:
        out = nc.add(out, nc.scale(att, weights.lambda2))
    return out


def generator_terms(bundle: ModelBundle, x, a, b, mode: str | None = None) -> dict[str, Tensor]:
    mode = mode or bundle.mode
    x = _flatten(bundle, x)
    z = bundle.encoder(x)
    if mode == CONDITIONAL:
        x_rec = decode(bundle, z, a)
        x_fake = decode(bundle, z, b)
        feat = bundle.trunk(x_fake)
        return {
            "rec": loss_rec(x, x_rec),
            "att": loss_att_g(_attr_rows(bundle, b, x.shape[0]).data, bundle.attr_head(feat)),
            "adv": loss_adv_g(bundle.critic_head(feat)),
        }
    # non-conditional composition: the generated image is the reconstruction
    x_gen = decode(bundle, z, a) if bundle.mode == CONDITIONAL else decode(bundle, z)
    return {"rec": loss_rec(x, x_gen), "adv": loss_adv_g(bundle.critic(x_gen))}


def loss_generator(bundle: ModelBundle, x, a, b, weights: LossWeights, mode: str | None = None) -> Tensor:
    t = generator_terms(bundle, x, a, b, mode)
    return compose_generator_loss(weights, t["rec"], t["adv"], t.get("att"))


def discriminator_terms(bundle: ModelBundle, x, a, b, fake=None) -> dict[str, Tensor]:
    x = _flatten(bundle, x)
    if fake is None:
        with nc.no_grad():
            if bundle.mode == CONDITIONAL:
                fake = generate(bundle, x, b)
            else:
                fake = generate(bundle, x)
    fake = fake if isinstance(fake, Tensor) else Tensor(fake)
    f_real = bundle.trunk(x)
    f_fake = bundle.trunk(fake)
    terms = {
        "adv": loss_adv_d(bundle.critic_head(f_real), bundle.critic_head(f_fake)),
        "plaus": loss_plausibility(bundle.plaus_head(f_real), bundle.plaus_head(f_fake)),
    }
    if bundle.mode == CONDITIONAL:
        terms["att"] = loss_att_c(_attr_rows(bundle, a, x.shape[0]).data, bundle.attr_head(f_real))
    return terms


def loss_discriminator_classifier(bundle: ModelBundle, x, a, b, weights: LossWeights, fake=None) -> Tensor:
    """lambda3 * L_att^C + L_adv^D (the plausibility-head term is added by ``train``)."""
    if weights.lambda3 < 0:
        raise ContractError("lambda3 must be non-negative")
    t = discriminator_terms(bundle, x, a, b, fake)
    if "att" not in t:
        return t["adv"]
    return nc.add(nc.scale(t["att"], weights.lambda3), t["adv"])


def sample_attribute_prior(rng: np.random.Generator, n_attributes: int, size: int | None = None) -> np.ndarray:
    """Independent U[0, 1] per attribute."""
    if n_attributes < 1:
        raise ContractError("n_attributes must be >= 1")
    shape = (n_attributes,) if size is None else (size, n_attributes)
    return rng.random(shape).astype(np.float32)


# ---------------------------------------------------------------- training

class Sgd:
    """SGD with classical momentum."""

    def __init__(self, params: Iterable[Tensor], lr: float = 0.01, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        lr = np.float32(self.lr)
        mu = np.float32(self.momentum)
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= mu
            v += p.grad
            p.data -= lr * v


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    clip: float = 0.01
    n_critic: int = 5
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)


def _check_finite(value: float, epoch: int, what: str) -> None:
    if not math.isfinite(value):
        raise TrainingError(f"{what} loss became non-finite", epoch)


def train(bundle: ModelBundle, dataset: AnnotatedDataset, config: TrainConfig) -> tuple[ModelBundle, list[dict]]:
    """Alternate ``n_critic`` critic/classifier steps with one generator step.

    Returns a trained copy of ``bundle`` and one loss record per epoch. An
    epoch is ``len(dataset) // batch_size`` generator steps; each critic step
    draws its own real batch, and critic trunk + critic head weights are
    clipped to [-clip, clip] after every critic step.
    """
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    bundle = copy.deepcopy(bundle)
    rng = np.random.default_rng(config.seed)
    x_all = dataset.images.reshape(len(dataset), -1).astype(np.float32)
    a_all = dataset.attributes.astype(np.float32)
    if bundle.mode == CONDITIONAL and a_all.shape[1] != bundle.n_attributes:
        raise DimensionError(f"dataset has {a_all.shape[1]} attributes, bundle expects {bundle.n_attributes}")
    n = len(dataset)
    bs = min(config.batch_size, n)
    steps = max(1, n // bs)
    g_opt = Sgd(bundle.generator_params, config.lr, config.momentum)
    d_opt = Sgd(bundle.discriminator_params, config.lr, config.momentum)
    w = config.weights
    history: list[dict] = []
    for epoch in range(config.epochs):
        sums = {"g_total": 0.0, "rec": 0.0, "att_g": 0.0, "adv_g": 0.0,
                "d_total": 0.0, "att_c": 0.0, "adv_d": 0.0, "plaus": 0.0}
        perm = rng.permutation(n)
        for s in range(steps):
            for _ in range(config.n_critic):
                idx = rng.choice(n, bs, replace=False)
                b = sample_attribute_prior(rng, bundle.n_attributes, bs)
                d_opt.zero_grad()
                t = discriminator_terms(bundle, x_all[idx], a_all[idx], b)
                d_loss = nc.add(t["adv"], t["plaus"])
                if "att" in t:
                    d_loss = nc.add(d_loss, nc.scale(t["att"], w.lambda3))
                nc.backward(d_loss)
                d_opt.step()
                for p in bundle.clipped_params:
                    np.clip(p.data, -config.clip, config.clip, out=p.data)
                sums["d_total"] += d_loss.item() / config.n_critic
                sums["adv_d"] += t["adv"].item() / config.n_critic
                sums["plaus"] += t["plaus"].item() / config.n_critic
                if "att" in t:
                    sums["att_c"] += t["att"].item() / config.n_critic
            idx = perm[s * bs:(s + 1) * bs]
            b = sample_attribute_prior(rng, bundle.n_attributes, len(idx))
            g_opt.zero_grad()
            t = generator_terms(bundle, x_all[idx], a_all[idx], b)
            g_loss = compose_generator_loss(w, t["rec"], t["adv"], t.get("att"))
            nc.backward(g_loss)
            g_opt.step()
            sums["g_total"] += g_loss.item()
            sums["rec"] += t["rec"].item()
            sums["adv_g"] += t["adv"].item()
            if "att" in t:
                sums["att_g"] += t["att"].item()
        record = {k: v / steps for k, v in sums.items()}
        record["epoch"] = epoch
        for k in ("g_total", "d_total"):
            _check_finite(record[k], epoch, k)
        history.append(record)
    d_opt.zero_grad()
    g_opt.zero_grad()
    return bundle, history


# ---------------------------------------------------------------- target model

@dataclass
class TargetModel:
    net: Mlp
    classes: list[str]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def probs(self, images: np.ndarray) -> np.ndarray:
        x = np.asarray(images, dtype=np.float32).reshape(-1, self.net.sizes[0])
        return self.net.forward_numpy(x)

    def predict(self, images: np.ndarray) -> np.ndarray:
        return np.argmax(self.probs(images), axis=-1)


@dataclass
class TargetConfig:
    hidden: tuple[int, ...] = (64,)
    epochs: int = 100
    batch_size: int = 16
    lr: float = 0.003
    momentum: float = 0.9
    seed: int = 0


def build_target(n_inputs: int, classes: Sequence[str], hidden: Sequence[int] = (64,), seed: int = 0) -> TargetModel:
    rng = np.random.default_rng(seed)
    net = Mlp([n_inputs, *hidden, len(classes)], "softmax", rng, name="target")
    return TargetModel(net, list(classes))


def train_target(dataset: AnnotatedDataset, split: SplitPlan, config: TargetConfig) -> tuple[TargetModel, float]:
    """Train the audited classifier on ``target_train``; report ``target_holdout`` accuracy."""
    split.check_disjoint()
    train_idx, hold_idx = split.target_train, split.target_holdout
    if len(train_idx) == 0:
        raise ContractError("target_train split is empty")
    x = dataset.images.reshape(len(dataset), -1).astype(np.float32)
    y = dataset.labels
    L = max(dataset.n_classes, 2)
    classes = list(dataset.class_names) + [f"class_{i}" for i in range(dataset.n_classes, L)]
    model = build_target(x.shape[1], classes, config.hidden, config.seed)
    rng = np.random.default_rng(config.seed)
    opt = Sgd(model.net.params, config.lr, config.momentum)
    onehot = np.eye(L, dtype=np.float32)
    bs = config.batch_size
    for epoch in range(config.epochs):
        perm = rng.permutation(train_idx)
        total = 0.0
        for s in range(0, len(perm), bs):
            idx = perm[s:s + bs]
            opt.zero_grad()
            loss = nc.cross_entropy(onehot[y[idx]], model.net(Tensor(x[idx])))
            nc.backward(loss)
            opt.step()
            total += loss.item()
        _check_finite(total, epoch, "target")
    opt.zero_grad()
    if len(hold_idx) == 0:
        return model, float("nan")
    acc = float(np.mean(model.predict(x[hold_idx]) == y[hold_idx]))
    return model, acc


# ---------------------------------------------------------------- persistence

def _params_blob(networks: dict[str, Mlp]) -> dict[str, np.ndarray]:
    out = {}
    for net in networks.values():
        for p in net.params:
            out[p.name] = p.data
    return out


def _restore(networks: dict[str, Mlp], tensors: dict[str, np.ndarray]) -> None:
    for net in networks.values():
        for p in net.params:
            if p.name not in tensors:
                raise FormatError(f"parameter {p.name} missing from file")
            arr = tensors[p.name]
            if arr.shape != p.shape:
                raise FormatError(f"parameter {p.name} has shape {arr.shape}, expected {p.shape}")
            p.data = arr.astype(np.float32).copy()


def save_bundle(bundle: ModelBundle, path) -> None:
    header = {
        "kind": "bundle",
        "mode": bundle.mode,
        "image_shape": list(bundle.image_shape),
        "n_attributes": bundle.n_attributes,
        "latent": bundle.latent,
        "hidden": list(bundle.hidden),
        "seed": bundle.seed,
        "networks": {k: v.spec() for k, v in bundle.networks().items()},
    }
    cgmf.write(path, header, _params_blob(bundle.networks()))


def load_bundle(path) -> ModelBundle:
    header, tensors = cgmf.read(path)
    if header.get("kind") != "bundle":
        raise FormatError(f"{path} is not a model bundle (kind={header.get('kind')!r})")
    try:
        bundle = build_bundle(header["image_shape"], header["n_attributes"], header["latent"],
                              header["hidden"], header["mode"], header["seed"], init="zeros")
    except KeyError as exc:
        raise FormatError(f"bundle header missing {exc.args[0]!r}") from None
    _restore(bundle.networks(), tensors)
    return bundle


def save_target(model: TargetModel, path) -> None:
    header = {"kind": "target", "classes": model.classes, "networks": {"target": model.net.spec()}}
    cgmf.write(path, header, _params_blob({"target": model.net}))


def load_target(path) -> TargetModel:
    header, tensors = cgmf.read(path)
    if header.get("kind") != "target":
        raise FormatError(f"{path} is not a target model (kind={header.get('kind')!r})")
    spec = header["networks"]["target"]
    net = Mlp(spec["sizes"], spec["head"], init="zeros", name="target")
    _restore({"target": net}, tensors)
    return TargetModel(net, list(header["classes"]))
