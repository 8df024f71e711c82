"""Estimator plumbing: sklearn-style parameter handling and validation."""
from __future__ import annotations

import inspect

from .errors import TankoptError


class ParamsMixin:
    """get_params/set_params over the constructor signature, sklearn-style."""

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [p.name for p in sig.parameters.values()
                if p.name != "self" and p.kind == p.POSITIONAL_OR_KEYWORD]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(
                    f"invalid parameter {key!r} for {type(self).__name__}; "
                    f"valid parameters are {sorted(valid)}")
            setattr(self, key, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


class NotFittedError(TankoptError):
    pass


def check_is_fitted(estimator, attribute: str):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first")


def check_positive_int(value, name: str) -> int:
    v = int(value)
    if v < 1:
        raise ValueError(f"{name} must be a positive integer, got {value}")
    return v
