"""Plain-text key=value configuration files mapped onto ExperimentConfig.

Lines look like `mobility.density = 15`; `#` starts a comment. Unknown keys
are rejected so typos fail loudly.
"""

from __future__ import annotations

from typing import Callable, Optional

from vecsim.harness import ExperimentConfig


def _opt(cast: Callable):
    def inner(text: str):
        return None if text.lower() in ("none", "null", "") else cast(text)

    return inner


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _str(text: str) -> str:
    return text


# key -> (attribute path, caster)
KEYS: dict[str, tuple[tuple[str, ...], Callable]] = {
    "scheme": (("scheme",), _str),
    "scheme.eps": (("scheme_eps",), float),
    "sim.seed": (("seed",), int),
    "sim.n_seeds": (("n_seeds",), int),
    "sim.seeds": (("seeds",), _int_list),
    "sim.rounds": (("rounds",), int),
    "sim.capacity": (("capacity",), int),
    "sim.coverage_m": (("coverage_m",), float),
    "sim.round_duration_s": (("round_duration_s",), float),
    "sim.content_size_bytes": (("content_size_bytes",), float),
    "mobility.mu": (("mobility", "mu"), float),
    "mobility.sigma": (("mobility", "sigma"), float),
    "mobility.u_min": (("mobility", "u_min"), float),
    "mobility.u_max": (("mobility", "u_max"), float),
    "mobility.density": (("mobility", "density"), _opt(float)),
    "mobility.arrival_rate": (("mobility", "arrival_rate"), _opt(float)),
    "channel.bandwidth_hz": (("channel", "bandwidth_hz"), float),
    "channel.p_rsu_dbm": (("channel", "p_rsu_dbm"), float),
    "channel.p_mbs_dbm": (("channel", "p_mbs_dbm"), float),
    "channel.noise_dbm": (("channel", "noise_dbm"), float),
    "channel.wired_rate_bps": (("channel", "wired_rate_bps"), float),
    "channel.pathloss.v2r.intercept_db": (("channel", "v2r", "intercept_db"), float),
    "channel.pathloss.v2r.slope": (("channel", "v2r", "slope"), float),
    "channel.pathloss.v2r.shadow_sigma_db": (("channel", "v2r", "shadow_sigma_db"), float),
    "channel.pathloss.v2b.intercept_db": (("channel", "v2b", "intercept_db"), float),
    "channel.pathloss.v2b.slope": (("channel", "v2b", "slope"), float),
    "channel.pathloss.v2b.shadow_sigma_db": (("channel", "v2b", "shadow_sigma_db"), float),
    "geometry.rsu_offset_m": (("channel", "rsu_offset_m"), float),
    "geometry.mbs_offset_m": (("channel", "mbs_offset_m"), float),
    "data.source": (("data", "source"), _str),
    "data.path": (("data", "path"), _opt(_str)),
    "data.train_frac": (("data", "train_frac"), float),
    "data.requests_per_vehicle": (("data", "requests_per_vehicle"), int),
    "data.catalog_cap": (("data", "catalog_cap"), _opt(int)),
    "data.partitions": (("data", "partitions"), int),
    "data.synthetic_users": (("data", "synthetic_users"), int),
    "data.synthetic_contents": (("data", "synthetic_contents"), int),
    "data.synthetic_zipf": (("data", "synthetic_zipf"), float),
    "data.synthetic_min_ratings": (("data", "synthetic_min_ratings"), int),
    "data.synthetic_mean_extra_ratings": (("data", "synthetic_mean_extra_ratings"), float),
    "data.synthetic_ratings_sigma": (("data", "synthetic_ratings_sigma"), float),
    "fl.mode": (("fl", "mode"), _str),
    "fl.mu1": (("fl", "mu1"), float),
    "fl.mu2": (("fl", "mu2"), float),
    "fl.aggregation": (("fl", "aggregation"), _str),
    "fl.eq10": (("fl", "train", "anchor"), _str),
    "fl.rho": (("fl", "train", "rho"), float),
    "fl.beta": (("fl", "train", "beta"), float),
    "fl.eta_l": (("fl", "train", "eta_l"), float),
    "fl.epochs": (("fl", "train", "epochs"), int),
    "fl.batch_size": (("fl", "train", "batch_size"), int),
    "fl.hidden": (("fl", "hidden_dim"), int),
    "fl.t_training_s": (("fl", "t_training_s"), float),
    "fl.t_inference_s": (("fl", "t_inference_s"), float),
    "fl.model_bits_per_param": (("fl", "model_bits_per_param"), int),
    "drl.replay_capacity": (("drl", "replay_capacity"), int),
    "drl.minibatch": (("drl", "minibatch"), int),
    "drl.gamma": (("drl", "gamma"), float),
    "drl.lr": (("drl", "lr"), float),
    "drl.target_sync": (("drl", "target_sync"), int),
    "drl.episodes": (("drl", "episodes"), int),
    "drl.slots": (("drl", "slots"), int),
    "drl.swap_n": (("drl", "swap_n"), _opt(int)),
    "drl.eps_start": (("drl", "eps_start"), float),
    "drl.eps_end": (("drl", "eps_end"), float),
    "drl.eps_decay_frac": (("drl", "eps_decay_frac"), float),
    "drl.hidden": (("drl", "hidden_dim"), int),
    "drl.lambda1": (("reward", "lambda1"), float),
    "drl.lambda2": (("reward", "lambda2"), float),
    "drl.lambda3": (("reward", "lambda3"), float),
    "popularity.m": (("popularity", "m"), int),
    "popularity.k": (("popularity", "k"), int),
    "popularity.f_c": (("popularity", "f_c"), _opt(int)),
}

# eq10 names the anchor of each local training step
_EQ10_ALIASES = {"cumulative": "cumulative", "literal": "literal"}


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{origin}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def apply_settings(config: ExperimentConfig, pairs: dict[str, str], origin: str = "<config>") -> ExperimentConfig:
    for key, text in pairs.items():
        if key not in KEYS:
            raise ValueError(f"{origin}: unknown configuration key {key!r}")
        path, cast = KEYS[key]
        try:
            value = cast(text)
        except ValueError:
            raise ValueError(f"{origin}: bad value {text!r} for key {key!r}") from None
        if key == "fl.eq10" and value not in _EQ10_ALIASES:
            raise ValueError(f"{origin}: fl.eq10 must be cumulative or literal, got {value!r}")
        target = config
        for attr in path[:-1]:
            target = getattr(target, attr)
        setattr(target, path[-1], value)
    return config


def load_config(path: Optional[str] = None) -> ExperimentConfig:
    config = ExperimentConfig()
    if path is not None:
        with open(path) as fh:
            apply_settings(config, parse_config_text(fh.read(), path), path)
    return config
