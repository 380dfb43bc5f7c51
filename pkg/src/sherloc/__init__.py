"""Privacy-preserving location recommendations over switchable encryption.

The pieces, bottom up: `she` (Paillier + composite-modulus ElGamal over one
shared modulus), `switching` (AddToMul, the two-party MulToAdd, and the
zero-safe pair encoding), `hilbert` (grid-to-index mapping), `recommender`
(co-occurrence collaborative filtering, plain and encrypted), `protocol`
(the client / server Y / proxy X choreography over loopback or sockets),
`datagen` and `bench` (synthetic data and the timing harness), `cli`.
"""

from .errors import SherlocError
from .she import (
    AddCiphertext,
    AddKeypair,
    KeyGenParams,
    KeyShares,
    MulCiphertext,
    MulKeypair,
    dec_add,
    dec_mul,
    enc_add,
    enc_mul,
    keygen,
)
from .switching import (
    LocalSwitch,
    NestedCiphertext,
    PairEncodedValue,
    add_to_mul,
    pair_decrypt,
    pair_encode,
)
from .hilbert import GridCell, HilbertIndex, index_to_xy, xy_to_index
from .recommender import CoMatrix, PreferenceVector, build_cm, predict_plain
from .protocol import ClientSession, LoopbackHub, ProxyX, ServerY

__all__ = [
    "AddCiphertext",
    "AddKeypair",
    "ClientSession",
    "CoMatrix",
    "GridCell",
    "HilbertIndex",
    "KeyGenParams",
    "KeyShares",
    "LocalSwitch",
    "LoopbackHub",
    "MulCiphertext",
    "MulKeypair",
    "NestedCiphertext",
    "PairEncodedValue",
    "PreferenceVector",
    "ProxyX",
    "ServerY",
    "SherlocError",
    "add_to_mul",
    "build_cm",
    "dec_add",
    "dec_mul",
    "enc_add",
    "enc_mul",
    "index_to_xy",
    "keygen",
    "pair_decrypt",
    "pair_encode",
    "predict_plain",
    "xy_to_index",
]
