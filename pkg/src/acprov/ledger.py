"""Hash-linked blocks with proof-of-authority sealing and file persistence.

Design notes that matter for interoperability:

* ``tx_root`` is a sequential hash fold over raw 32-byte digests,
  seeded with sha256 of the empty byte string; not a Merkle tree.
* The sealer of block i is ``authorities[i mod n]``, strict round
  robin with no skips.  Timestamps are logical seconds and only ever
  supplied by callers, never read from a wall clock.
* The genesis block is synthesized from the genesis config with an
  all-zero seal; the config file, not block 0, is the trust root.
* The ledger file holds one canonically serialized block per line,
  UTF-8 with LF endings.  Loading is strict: every line must re-encode
  byte-identically, so any single-byte edit of the file surfaces as a
  parse or validation failure.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Mapping, Optional, Sequence, Tuple

from . import registry
from .canonical import (
    ZERO_HASH,
    canonical_serialize,
    from_hex,
    hash_of,
    hash_obj,
    is_address_str,
    is_hash_str,
    to_hex,
)
from .crypto import KeyPair, derive_address, verify
from .gas import GasParams

EMPTY_TX_ROOT = hash_of(b"")
ZERO_SEAL = "0x" + "00" * 64

# Validation rule identifiers; stable, reported by ValidationReport.
RULE_GENESIS = "genesis"
RULE_INDEX = "index"
RULE_TIMESTAMP = "timestamp"
RULE_LINKAGE = "linkage"
RULE_SEALER = "sealer"
RULE_SEAL = "seal"
RULE_TX_ROOT = "tx_root"
RULE_TX_SIGNATURE = "tx_signature"
RULE_TX_NONCE = "tx_nonce"
RULE_STATE_ROOT = "state_root"


class LedgerError(Exception):
    pass


class NotAuthorityError(LedgerError):
    pass


class WrongTurnError(LedgerError):
    pass


class ClockRegressionError(LedgerError):
    pass


class StorageError(LedgerError):
    pass


class ParseError(LedgerError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    block_index: Optional[int] = None
    rule: Optional[str] = None
    detail: Optional[str] = None


class ValidationFailedError(LedgerError):
    def __init__(self, report: ValidationReport):
        super().__init__(
            f"block {report.block_index}: rule {report.rule}: {report.detail}"
        )
        self.report = report


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


def _as_int(value: Any, name: str, minimum: int = 0) -> int:
    _require(
        isinstance(value, int) and not isinstance(value, bool),
        f"{name} must be an integer",
    )
    _require(value >= minimum, f"{name} must be >= {minimum}")
    return value


# ---------------------------------------------------------------------------
# Genesis configuration


@dataclass(frozen=True)
class GenesisConfig:
    chain_id: int = 5
    authorities: Tuple[Tuple[str, str], ...] = ()
    roles: Mapping[str, registry.Role] = field(default_factory=dict)
    initial_balances: Mapping[str, int] = field(default_factory=dict)
    gas_params: GasParams = field(default_factory=GasParams)
    faucet_amount: int = 5 * 10**17  # 0.5 ETH per claim
    faucet_cooldown: int = 86_400  # one claim per 24 h
    # Verification keys for non-authority accounts; authorities carry
    # theirs in the authority list.  Every role-bearing address needs a
    # key so transaction signatures can be checked during replay.
    account_keys: Mapping[str, str] = field(default_factory=dict)

    @property
    def authority_addresses(self) -> Tuple[str, ...]:
        return tuple(addr for addr, _ in self.authorities)

    def public_key_of(self, address: str) -> Optional[str]:
        for addr, pub in self.authorities:
            if addr == address:
                return pub
        return self.account_keys.get(address)

    def validate(self) -> None:
        _require(self.chain_id > 0, "chain_id must be > 0")
        _require(len(self.authorities) >= 1, "at least one authority required")
        _require(self.faucet_amount >= 0, "faucet_amount must be >= 0")
        _require(self.faucet_cooldown >= 0, "faucet_cooldown must be >= 0")
        addresses = self.authority_addresses
        _require(len(set(addresses)) == len(addresses), "authority addresses must be distinct")
        for addr, pub in self.authorities:
            _require(
                derive_address(pub) == addr,
                f"authority {addr} does not match its public key",
            )
            _require(
                self.roles.get(addr) is registry.Role.AUTHORITY,
                f"authority {addr} must have role authority",
            )
        for addr, role in self.roles.items():
            _require(isinstance(role, registry.Role), f"bad role for {addr}")
            pub = self.public_key_of(addr)
            _require(pub is not None, f"no public key for account {addr}")
            _require(
                derive_address(pub) == addr,
                f"account {addr} does not match its public key",
            )
        for addr, balance in self.initial_balances.items():
            _require(addr in self.roles, f"balance for unknown account {addr}")
            _require(balance >= 0, f"negative balance for {addr}")
        for addr in self.account_keys:
            _require(addr in self.roles, f"key for unknown account {addr}")

    def to_canonical(self) -> dict:
        return {
            "account_keys": dict(self.account_keys),
            "authorities": [[addr, pub] for addr, pub in self.authorities],
            "chain_id": self.chain_id,
            "faucet_amount": self.faucet_amount,
            "faucet_cooldown": self.faucet_cooldown,
            "gas_params": self.gas_params.to_canonical(),
            "initial_balances": dict(self.initial_balances),
            "roles": {addr: role.value for addr, role in self.roles.items()},
        }

    @classmethod
    def from_canonical(cls, doc: Mapping[str, Any]) -> "GenesisConfig":
        _require(isinstance(doc, Mapping), "genesis must be an object")
        expected = {
            "account_keys",
            "authorities",
            "chain_id",
            "faucet_amount",
            "faucet_cooldown",
            "gas_params",
            "initial_balances",
            "roles",
        }
        _require(set(doc) == expected, f"genesis must have fields {sorted(expected)}")
        authorities = tuple(
            (pair[0], pair[1])
            for pair in doc["authorities"]
            if _require(
                isinstance(pair, Sequence) and len(pair) == 2, "authority entries are pairs"
            )
            is None
        )
        config = cls(
            chain_id=_as_int(doc["chain_id"], "chain_id", minimum=1),
            authorities=authorities,
            roles={addr: registry.Role(role) for addr, role in doc["roles"].items()},
            initial_balances={
                addr: _as_int(v, f"balance of {addr}")
                for addr, v in doc["initial_balances"].items()
            },
            gas_params=GasParams.from_canonical(doc["gas_params"]),
            faucet_amount=_as_int(doc["faucet_amount"], "faucet_amount"),
            faucet_cooldown=_as_int(doc["faucet_cooldown"], "faucet_cooldown"),
            account_keys=dict(doc["account_keys"]),
        )
        config.validate()
        return config

    def save(self, path) -> None:
        text = json.dumps(self.to_canonical(), sort_keys=True, indent=2) + "\n"
        Path(path).write_text(text, encoding="utf-8")

    @classmethod
    def load(cls, path) -> "GenesisConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.lineno, f"genesis file: {exc.msg}") from exc
        try:
            return cls.from_canonical(doc)
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(1, f"genesis file: {exc}") from exc


# ---------------------------------------------------------------------------
# Blocks


@dataclass(frozen=True)
class BlockHeader:
    index: int
    timestamp: int
    prev_hash: str
    tx_root: str
    sealer: str
    state_root: str

    def to_canonical(self) -> dict:
        return {
            "index": self.index,
            "prev_hash": self.prev_hash,
            "sealer": self.sealer,
            "state_root": self.state_root,
            "timestamp": self.timestamp,
            "tx_root": self.tx_root,
        }

    @classmethod
    def from_canonical(cls, doc: Mapping[str, Any]) -> "BlockHeader":
        _require(isinstance(doc, Mapping), "header must be an object")
        expected = {"index", "prev_hash", "sealer", "state_root", "timestamp", "tx_root"}
        _require(set(doc) == expected, f"header must have fields {sorted(expected)}")
        _require(is_hash_str(doc["prev_hash"]), "prev_hash must be a 32-byte 0x hash")
        _require(is_hash_str(doc["tx_root"]), "tx_root must be a 32-byte 0x hash")
        _require(is_hash_str(doc["state_root"]), "state_root must be a 32-byte 0x hash")
        _require(is_address_str(doc["sealer"]), "sealer must be a 20-byte 0x address")
        return cls(
            index=_as_int(doc["index"], "index"),
            timestamp=_as_int(doc["timestamp"], "timestamp"),
            prev_hash=doc["prev_hash"],
            tx_root=doc["tx_root"],
            sealer=doc["sealer"],
            state_root=doc["state_root"],
        )


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    txs: Tuple[registry.TxEnvelope, ...]
    seal: str

    def to_canonical(self) -> dict:
        return {
            "header": self.header.to_canonical(),
            "seal": self.seal,
            "txs": [tx.to_canonical() for tx in self.txs],
        }

    @classmethod
    def from_canonical(cls, doc: Mapping[str, Any]) -> "Block":
        _require(isinstance(doc, Mapping), "block must be an object")
        _require(set(doc) == {"header", "seal", "txs"}, "block has fields header, seal, txs")
        _require(isinstance(doc["txs"], Sequence) and not isinstance(doc["txs"], str), "txs must be a list")
        _require(isinstance(doc["seal"], str), "seal must be a string")
        return cls(
            header=BlockHeader.from_canonical(doc["header"]),
            txs=tuple(registry.TxEnvelope.from_canonical(t) for t in doc["txs"]),
            seal=doc["seal"],
        )


def header_hash(header: BlockHeader) -> str:
    return hash_obj(header.to_canonical())


def tx_root_of(txs: Sequence[registry.TxEnvelope]) -> str:
    """Sequential fold: start at sha256(empty), absorb each tx digest."""
    acc = hashlib.sha256(b"").digest()
    for tx in txs:
        acc = hashlib.sha256(acc + from_hex(registry.tx_hash(tx))).digest()
    return to_hex(acc)


def genesis_state(genesis: GenesisConfig) -> registry.RegistryState:
    accounts = {}
    for addr in sorted(genesis.roles):
        accounts[addr] = registry.Account(
            address=addr,
            role=genesis.roles[addr],
            balance=genesis.initial_balances.get(addr, 0),
            nonce=0,
            last_faucet_claim=None,
            public_key=genesis.public_key_of(addr) or "",
        )
    return registry.RegistryState(
        chain_id=genesis.chain_id, contract=None, accounts=accounts, products={}
    )


def genesis_block(genesis: GenesisConfig) -> Block:
    header = BlockHeader(
        index=0,
        timestamp=0,
        prev_hash=ZERO_HASH,
        tx_root=EMPTY_TX_ROOT,
        sealer=genesis.authority_addresses[0],
        state_root=registry.state_commitment(genesis_state(genesis)),
    )
    return Block(header=header, txs=(), seal=ZERO_SEAL)


def make_context(genesis: GenesisConfig, header: BlockHeader) -> registry.TxContext:
    return registry.TxContext(
        block_index=header.index,
        timestamp=header.timestamp,
        sealer=header.sealer,
        gas_params=genesis.gas_params,
        faucet_amount=genesis.faucet_amount,
        faucet_cooldown=genesis.faucet_cooldown,
    )


def seal_block(
    pending: Sequence[registry.TxEnvelope],
    parent: BlockHeader,
    state_root: str,
    sealer_key: KeyPair,
    timestamp: int,
    genesis: GenesisConfig,
) -> Block:
    """Build and sign the next block; enforces the round-robin schedule."""
    authorities = genesis.authority_addresses
    sealer = sealer_key.address
    if sealer not in authorities:
        raise NotAuthorityError(f"{sealer} is not a genesis authority")
    index = parent.index + 1
    due = authorities[index % len(authorities)]
    if sealer != due:
        raise WrongTurnError(f"block {index} is {due}'s turn, not {sealer}'s")
    if timestamp < parent.timestamp:
        raise ClockRegressionError(
            f"timestamp {timestamp} precedes parent timestamp {parent.timestamp}"
        )
    header = BlockHeader(
        index=index,
        timestamp=timestamp,
        prev_hash=header_hash(parent),
        tx_root=tx_root_of(pending),
        sealer=sealer,
        state_root=state_root,
    )
    seal = sealer_key.sign(from_hex(header_hash(header)))
    return Block(header=header, txs=tuple(pending), seal=seal)


# ---------------------------------------------------------------------------
# Validation and replay


def _check_block(
    block: Block,
    prev: BlockHeader,
    state: registry.RegistryState,
    genesis: GenesisConfig,
) -> Tuple[registry.RegistryState, List[registry.Receipt]]:
    """Validate one block against its parent and pre-state.

    Returns the post-state and receipts; raises ValidationFailedError
    naming the violated rule otherwise.
    """
    index = prev.index + 1

    def fail(rule: str, detail: str) -> ValidationFailedError:
        return ValidationFailedError(ValidationReport(False, index, rule, detail))

    h = block.header
    if h.index != index:
        raise fail(RULE_INDEX, f"expected index {index}, found {h.index}")
    if h.timestamp < prev.timestamp:
        raise fail(RULE_TIMESTAMP, f"timestamp {h.timestamp} < parent {prev.timestamp}")
    expected_prev = header_hash(prev)
    if h.prev_hash != expected_prev:
        raise fail(RULE_LINKAGE, f"prev_hash {h.prev_hash} != {expected_prev}")
    authorities = genesis.authority_addresses
    due = authorities[index % len(authorities)]
    if h.sealer != due:
        raise fail(RULE_SEALER, f"sealer {h.sealer} out of turn, expected {due}")
    public_key = genesis.public_key_of(h.sealer)
    if public_key is None or not verify(public_key, from_hex(header_hash(h)), block.seal):
        raise fail(RULE_SEAL, "seal signature does not verify")
    recomputed_root = tx_root_of(block.txs)
    if h.tx_root != recomputed_root:
        raise fail(RULE_TX_ROOT, f"tx_root {h.tx_root} != {recomputed_root}")
    ctx = make_context(genesis, h)
    receipts: List[registry.Receipt] = []
    for position, tx in enumerate(block.txs):
        state, receipt = registry.apply_tx(state, tx, ctx)
        if receipt.error == registry.BAD_SIGNATURE:
            raise fail(RULE_TX_SIGNATURE, f"tx {position} signature does not verify")
        if receipt.error == registry.BAD_NONCE:
            raise fail(RULE_TX_NONCE, f"tx {position} nonce mismatch")
        receipts.append(receipt)
    commitment = registry.state_commitment(state)
    if h.state_root != commitment:
        raise fail(RULE_STATE_ROOT, f"state_root {h.state_root} != {commitment}")
    return state, receipts


def _replay(
    blocks: Sequence[Block], genesis: GenesisConfig
) -> Tuple[registry.RegistryState, List[List[registry.Receipt]]]:
    """Full-chain validation; raises ValidationFailedError on the first offense."""
    if not blocks:
        raise ValidationFailedError(
            ValidationReport(False, 0, RULE_GENESIS, "chain is empty")
        )
    expected = genesis_block(genesis)
    if canonical_serialize(blocks[0].to_canonical()) != canonical_serialize(
        expected.to_canonical()
    ):
        raise ValidationFailedError(
            ValidationReport(False, 0, RULE_GENESIS, "block 0 does not match the genesis config")
        )
    state = genesis_state(genesis)
    receipts_per_block: List[List[registry.Receipt]] = [[]]
    prev = blocks[0].header
    for block in blocks[1:]:
        state, receipts = _check_block(block, prev, state, genesis)
        receipts_per_block.append(receipts)
        prev = block.header
    return state, receipts_per_block


def validate_chain(blocks: Sequence[Block], genesis: GenesisConfig) -> ValidationReport:
    """Check every chain invariant; failures are report values, not exceptions."""
    try:
        _replay(blocks, genesis)
    except ValidationFailedError as exc:
        return exc.report
    return ValidationReport(ok=True)


def replay_chain(
    blocks: Sequence[Block], genesis: GenesisConfig
) -> Tuple[registry.RegistryState, List[List[registry.Receipt]]]:
    """Validate and return (final state, receipts per block); raises if invalid."""
    return _replay(blocks, genesis)


# ---------------------------------------------------------------------------
# Persistence


def block_line(block: Block) -> bytes:
    return canonical_serialize(block.to_canonical()) + b"\n"


@dataclass
class LedgerStore:
    path: Path
    genesis: GenesisConfig
    blocks: List[Block]
    state: registry.RegistryState
    receipts: List[List[registry.Receipt]]

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def tip_commitment(self) -> str:
        return self.tip.header.state_root


def create_store(path, genesis: GenesisConfig) -> LedgerStore:
    """Start a new chain file containing only the genesis block."""
    genesis.validate()
    path = Path(path)
    if path.exists():
        raise StorageError(f"chain file already exists: {path}")
    block = genesis_block(genesis)
    try:
        fd = os.open(str(path), os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o644)
    except OSError as exc:
        raise StorageError(f"cannot create chain file {path}: {exc}") from exc
    try:
        os.write(fd, block_line(block))
    finally:
        os.close(fd)
    return LedgerStore(
        path=path,
        genesis=genesis,
        blocks=[block],
        state=genesis_state(genesis),
        receipts=[[]],
    )


def append_block(store: LedgerStore, block: Block) -> LedgerStore:
    """Validate against the tip, then append atomically (single write)."""
    state, receipts = _check_block(block, store.tip.header, store.state, store.genesis)
    try:
        fd = os.open(str(store.path), os.O_WRONLY | os.O_APPEND)
        try:
            os.write(fd, block_line(block))
        finally:
            os.close(fd)
    except OSError as exc:
        raise StorageError(f"cannot append to {store.path}: {exc}") from exc
    store.blocks.append(block)
    store.state = state
    store.receipts.append(receipts)
    return store


def parse_chain_bytes(raw: bytes) -> List[Block]:
    """Strict parse of a ledger file: every line must re-encode identically."""
    if raw == b"":
        raise ParseError(1, "empty file: genesis block required")
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    blocks: List[Block] = []
    for line_number, line in enumerate(lines, start=1):
        try:
            doc = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(line_number, f"not valid canonical JSON: {exc}") from exc
        try:
            block = Block.from_canonical(doc)
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(line_number, str(exc)) from exc
        if canonical_serialize(block.to_canonical()) != line:
            raise ParseError(line_number, "line is not the canonical block encoding")
        blocks.append(block)
    return blocks


def load_chain(path, genesis: GenesisConfig) -> LedgerStore:
    """Load, strictly parse, and fully validate a chain file."""
    path = Path(path)
    raw = path.read_bytes()  # FileNotFoundError propagates to the caller
    blocks = parse_chain_bytes(raw)
    state, receipts = _replay(blocks, genesis)  # ValidationFailedError on bad chains
    return LedgerStore(
        path=path, genesis=genesis, blocks=blocks, state=state, receipts=receipts
    )
