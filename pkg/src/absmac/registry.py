from __future__ import annotations

from absmac.ae import AeAgreement
from absmac.core import ConfigurationError, Protocol
from absmac.counter_race import K, CounterRace
from absmac.idgen import Buffered, IdGen

PROTOCOLS = ("counter-race", "counter-race+idgen", "ae-agreement", "id-gen")


def make_protocol(name: str, *, k: int = K, c_T: float = 1.0) -> Protocol:
    if name == "counter-race":
        return CounterRace(k)
    if name == "counter-race+idgen":
        return Buffered(CounterRace(k))
    if name == "ae-agreement":
        return AeAgreement(c_T)
    if name == "id-gen":
        return IdGen()
    raise ConfigurationError(f"unknown protocol {name!r}; expected one of {', '.join(PROTOCOLS)}")
