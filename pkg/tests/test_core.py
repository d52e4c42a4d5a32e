import hashlib
import random

import pytest

import gen
from idc.core import (
    GENESIS_HASH,
    INT_MAX,
    INT_MIN,
    Decision,
    DecisionRecord,
    Intent,
    SerializationError,
    canonical_serialize,
    chain_hash,
    check_value,
    deserialize,
    value_equals,
)

# computed with `openssl dgst -sha256`, outside Python
PINNED_GENESIS = "8ba657e3fead5e35f4a939b6079fa55d712e1eeb1528e0e98e775596d16ff0f8"
PINNED_CHAIN = "58017b381e6f68940028309426727e85df20f97c6897d2756c51e74408154ded"  # '{"a":1}' after genesis


def test_genesis_is_pinned():
    assert GENESIS_HASH == PINNED_GENESIS


def test_chain_hash_matches_external_vector():
    assert chain_hash(b'{"a":1}', GENESIS_HASH) == PINNED_CHAIN
    assert chain_hash(b'{"a":1}', bytes.fromhex(GENESIS_HASH)) == PINNED_CHAIN


def test_chain_hash_rejects_bad_prev():
    with pytest.raises(ValueError):
        chain_hash(b"x", "abc")


def test_canonical_examples():
    assert canonical_serialize({"b": 1, "a": 2}) == b'{"a":2,"b":1}'
    assert canonical_serialize(None) == b"null"
    assert canonical_serialize([True, "é", -3]) == '[true,"é",-3]'.encode()
    intent = Intent("email.send", "@stdlib/email/send", {"to": "x@y.z"}, {})
    assert canonical_serialize(intent) == canonical_serialize(intent)
    assert canonical_serialize(intent) == (
        b'{"action":"email.send","context":{},"params":{"to":"x@y.z"},"target":"@stdlib/email/send"}')


@pytest.mark.parametrize("bad", [1.5, float("nan"), {1: 2}, INT_MAX + 1, INT_MIN - 1, "\ud800", object()])
def test_non_values_rejected(bad):
    with pytest.raises(SerializationError):
        canonical_serialize(bad)


def test_int_bounds_accepted():
    assert deserialize(canonical_serialize([INT_MIN, INT_MAX])) == [INT_MIN, INT_MAX]


@pytest.mark.parametrize("text", ["1.0", "1e3", "NaN", '{"a":1,"a":2}', "[1,", ""])
def test_deserialize_rejects(text):
    with pytest.raises(SerializationError):
        deserialize(text)


def test_deep_nesting_bounded():
    v = []
    for _ in range(300):
        v = [v]
    with pytest.raises(SerializationError):
        check_value(v)


def test_value_equals_examples():
    assert value_equals(5, 5)
    assert not value_equals({"a": [1]}, {"a": [1, 2]})
    assert not value_equals(True, 1)
    assert not value_equals(0, False)
    assert value_equals({"x": [None, "s"]}, {"x": [None, "s"]})


def test_round_trip_fuzz():
    rng = random.Random(11)
    seen: dict[bytes, object] = {}
    for _ in range(10_000):
        v = gen.rand_value(rng, 4)
        data = canonical_serialize(v)
        back = deserialize(data)
        assert value_equals(v, back)
        assert canonical_serialize(back) == data
        # injectivity: equal bytes only for equal values
        if data in seen:
            assert value_equals(seen[data], v)
        seen[data] = v


def test_chain_hash_depends_on_every_byte():
    rng = random.Random(12)
    base = canonical_serialize({"k": gen.rand_value(rng, 3), "pad": "x" * 40})
    h = chain_hash(base, GENESIS_HASH)
    for _ in range(1000):
        k = rng.randrange(len(base))
        mutated = bytearray(base)
        mutated[k] ^= rng.randint(1, 255)
        assert chain_hash(bytes(mutated), GENESIS_HASH) != h
    prev = bytearray.fromhex(GENESIS_HASH)
    prev[5] ^= 1
    assert chain_hash(base, bytes(prev)) != h


def test_chain_hash_is_plain_sha256_of_concatenation():
    data = b"record"
    assert chain_hash(data, GENESIS_HASH) == hashlib.sha256(data + bytes.fromhex(GENESIS_HASH)).hexdigest()


def test_intent_validation():
    with pytest.raises(ValueError):
        Intent("", "@x/y")
    with pytest.raises(SerializationError):
        Intent("a.b", "@x/y", {"f": 1.0})
    a = Intent("a.b", "@x/y", {"n": 1, "m": 2})
    b = Intent("a.b", "@x/y", {"m": 2, "n": 1})
    assert a == b and hash(a) == hash(b) and a.digest() == b.digest()
    assert Intent.from_value(a.to_value()) == a
    assert Intent("a.b", "@x/y", {"n": True}) != Intent("a.b", "@x/y", {"n": 1})


def _record(**over) -> DecisionRecord:
    base = dict(seq=0, timestamp=1, intent=Intent("a.b", "@x/y"), decision=Decision.ALLOW,
                applied_rules=("r1",), policy_id="p", context={}, prev_hash=GENESIS_HASH)
    base.update(over)
    rec = DecisionRecord(**base)
    return DecisionRecord(**base, hash=rec.compute_hash())


def test_record_round_trip():
    rec = _record()
    back = DecisionRecord.from_value(deserialize(rec.line()))
    assert back == rec and back.compute_hash() == rec.hash


@pytest.mark.parametrize("field,value", [
    ("seq", -1), ("seq", "0"), ("decision", "maybe"), ("kind", "other"),
    ("applied_rules", [1]), ("hash", "XYZ"), ("prev_hash", "ab"),
])
def test_record_field_validation(field, value):
    v = _record().to_value()
    v[field] = value
    with pytest.raises(SerializationError):
        DecisionRecord.from_value(v)


def test_record_hash_excludes_itself():
    rec = _record()
    assert b'"hash"' not in canonical_serialize(rec)
    assert rec.hash == chain_hash(canonical_serialize(rec), GENESIS_HASH)
