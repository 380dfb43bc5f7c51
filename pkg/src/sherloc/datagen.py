"""Synthetic dataset generation for demos, tests and benchmarks.

A dataset is `pois` items of interest occupying the first `pois` positions
along a Hilbert curve, a handful of users with random visit histories over
those items, one target user's rating vector, and a random client location.
Everything derives from one seed, so regenerating with the same arguments is
byte-identical.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass

from .errors import DomainError
from .hilbert import HilbertIndex, index_to_xy
from .recommender import PreferenceVector, save_pv_csv, load_pv_csv

DEFAULT_ORDER = 6
MAX_VISITS = 8

USERS_FILE = "users.json"
PV_FILE = "pv.csv"
PLACEMENTS_FILE = "placements.csv"
META_FILE = "meta.json"


@dataclass
class Dataset:
    size: int
    order: int
    seed: int
    r_max: int
    lists: dict[str, list[int]]
    pv: PreferenceVector
    loc_d: int

    @property
    def loc_xy(self) -> tuple[int, int]:
        cell = index_to_xy(HilbertIndex(self.order, self.loc_d))
        return cell.x, cell.y


def fit_order(pois: int) -> int:
    """Smallest curve order (at least the default) whose grid holds `pois` cells."""
    order = DEFAULT_ORDER
    while 4**order < pois:
        order += 1
    return order


def generate(pois: int, users: int, seed: int, r_max: int = 15) -> Dataset:
    if pois <= 0:
        raise DomainError("need at least one item")
    if users <= 0:
        raise DomainError("need at least one user")
    rng = random.Random(seed)
    order = fit_order(pois)
    lists = {}
    for u in range(users):
        count = rng.randint(1, min(MAX_VISITS, pois))
        lists[f"u{u}"] = sorted(rng.sample(range(pois), count))
    values = [0] * pois
    for item in lists["u0"]:
        values[item] = rng.randint(1, r_max)
    loc_d = rng.randrange(pois)
    return Dataset(
        size=pois,
        order=order,
        seed=seed,
        r_max=r_max,
        lists=lists,
        pv=PreferenceVector(values, r_max=r_max),
        loc_d=loc_d,
    )


def write_dataset(out_dir: str, ds: Dataset) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, USERS_FILE), "w", encoding="utf-8") as fh:
        json.dump(ds.lists, fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_pv_csv(os.path.join(out_dir, PV_FILE), ds.pv)
    with open(os.path.join(out_dir, PLACEMENTS_FILE), "w", encoding="utf-8") as fh:
        fh.write("d,x,y\n")
        for d in range(ds.size):
            cell = index_to_xy(HilbertIndex(ds.order, d))
            fh.write(f"{d},{cell.x},{cell.y}\n")
    x, y = ds.loc_xy
    meta = {
        "size": ds.size,
        "order": ds.order,
        "seed": ds.seed,
        "r_max": ds.r_max,
        "users": len(ds.lists),
        "loc_d": ds.loc_d,
        "loc_x": x,
        "loc_y": y,
    }
    with open(os.path.join(out_dir, META_FILE), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_users(data_dir: str) -> dict[str, list[int]]:
    with open(os.path.join(data_dir, USERS_FILE), encoding="utf-8") as fh:
        return json.load(fh)


def load_meta(data_dir: str) -> dict:
    with open(os.path.join(data_dir, META_FILE), encoding="utf-8") as fh:
        return json.load(fh)


def load_pv(data_dir: str) -> PreferenceVector:
    return load_pv_csv(os.path.join(data_dir, PV_FILE))
