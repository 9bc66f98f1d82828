"""Ordinal binary encoding of clinical conditions (age, sex, time interval)."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ContractError

WIDTH = 100
MAX_INTERVAL = 49
MAX_AGE = 99


class Sex(str, Enum):
    MALE = "male"
    FEMALE = "female"

    @classmethod
    def parse(cls, value) -> "Sex":
        if isinstance(value, Sex):
            return value
        text = str(value).strip().lower()
        if text in ("m", "male"):
            return cls.MALE
        if text in ("f", "female"):
            return cls.FEMALE
        raise ContractError(f"unknown sex {value!r}")


@dataclass(frozen=True)
class ClinicalCondition:
    """Age at the source scan, sex, and the signed months to the target scan.

    Positive ``delta_months`` asks for a future shape, negative for a past one.
    """

    age: int
    sex: Sex
    delta_months: int

    def __post_init__(self):
        object.__setattr__(self, "sex", Sex.parse(self.sex))
        _check_int("age", self.age, 0, MAX_AGE)
        _check_int("delta_months", self.delta_months, -MAX_INTERVAL, MAX_INTERVAL)
        object.__setattr__(self, "age", int(self.age))
        object.__setattr__(self, "delta_months", int(self.delta_months))

    def encode(self) -> np.ndarray:
        return encode_condition(self)


def _check_int(name, value, lo, hi):
    if isinstance(value, bool) or int(value) != value:
        raise ContractError(f"{name} must be an integer, got {value!r}")
    if not lo <= value <= hi:
        raise ContractError(f"{name}={value} outside [{lo}, {hi}]")


def encode_interval(delta_months: int) -> np.ndarray:
    """Step vector: the first ``50 + delta`` entries are 0, the rest 1."""
    _check_int("delta_months", delta_months, -MAX_INTERVAL, MAX_INTERVAL)
    vec = np.ones(WIDTH, dtype=np.int8)
    vec[: WIDTH // 2 + int(delta_months)] = 0
    return vec


def encode_age(age: int) -> np.ndarray:
    """Thermometer code: the first ``age`` entries are 1, the rest 0."""
    _check_int("age", age, 0, MAX_AGE)
    vec = np.zeros(WIDTH, dtype=np.int8)
    vec[: int(age)] = 1
    return vec


def encode_sex(sex) -> np.ndarray:
    sex = Sex.parse(sex)
    return np.full(WIDTH, 1 if sex is Sex.FEMALE else 0, dtype=np.int8)


def encode_condition(cond: ClinicalCondition) -> np.ndarray:
    """300-entry vector laid out as [age | sex | interval]."""
    return np.concatenate(
        [encode_age(cond.age), encode_sex(cond.sex), encode_interval(cond.delta_months)]
    )
