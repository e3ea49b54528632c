"""Product registry state machine: accounts, roles, faucet, product lifecycle.

This is the deterministic "smart contract".  All operations are pure:
they take a RegistryState and return a new one, never mutating inputs.
Transaction failures are receipt codes, not exceptions.

Fee and nonce semantics
-----------------------
* Unauthenticated transactions (bad signature, bad nonce, unknown
  sender) change nothing.  Their receipt still records the assessed
  intrinsic gas and fee so that ``fee == gas_used * gas_price`` holds,
  but nothing is settled.
* Authenticated transactions that fail a variant rule pay the
  intrinsic (base + calldata) fee and bump the sender nonce.
* A sender that cannot afford its fee gets InsufficientFunds: the
  intrinsic fee is charged when affordable, otherwise nothing is
  (gas_used is then reported as 0 to keep the receipt arithmetic
  exact); the nonce is bumped either way.
* Faucet claims are fee-free in every outcome, including cooldown
  rejections; they exist to bootstrap empty accounts.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Mapping, Optional, Tuple, Union

from . import gas as gas_model
from .canonical import (
    canonical_serialize,
    from_hex,
    hash_obj,
    is_address_str,
    to_hex,
)
from .crypto import KeyPair, verify


class Role(str, Enum):
    MANUFACTURER = "manufacturer"
    DISTRIBUTOR = "distributor"
    RETAILER = "retailer"
    CONSUMER = "consumer"
    AUTHORITY = "authority"


TRUSTED_ROLES = frozenset({Role.MANUFACTURER, Role.DISTRIBUTOR, Role.RETAILER})


def is_trusted(role: Role) -> bool:
    return role in TRUSTED_ROLES


class Status(str, Enum):
    AVAILABLE = "available"
    UNAVAILABLE = "unavailable"


# Receipt codes.
BAD_SIGNATURE = "BadSignature"
BAD_NONCE = "BadNonce"
INSUFFICIENT_FUNDS = "InsufficientFunds"
ALREADY_DEPLOYED = "AlreadyDeployed"
NOT_TRUSTED_NODE = "NotTrustedNode"
NOT_DEPLOYED = "NotDeployed"
NOT_MANUFACTURER = "NotManufacturer"
BAD_PRODUCT_ID = "BadProductId"
BAD_METADATA = "BadMetadata"
DUPLICATE_PRODUCT_ID = "DuplicateProductId"
UNKNOWN_PRODUCT = "UnknownProduct"
NOT_OWNER = "NotOwner"
PRODUCT_UNAVAILABLE = "ProductUnavailable"
NOT_CONSUMER = "NotConsumer"
FAUCET_COOLDOWN = "FaucetCooldown"

PRODUCT_ID_RE = re.compile(r"[A-Za-z0-9._-]{1,64}\Z")
MAX_METADATA_BYTES = 1024


def is_valid_product_id(product_id: Any) -> bool:
    return isinstance(product_id, str) and PRODUCT_ID_RE.match(product_id) is not None


# ---------------------------------------------------------------------------
# Transaction kinds


@dataclass(frozen=True)
class Deploy:
    code_size: int


@dataclass(frozen=True)
class Register:
    product_id: str
    name: str
    metadata: str = ""


@dataclass(frozen=True)
class Transfer:
    product_id: str
    new_owner: str


@dataclass(frozen=True)
class Sell:
    product_id: str
    consumer: str


@dataclass(frozen=True)
class FaucetClaim:
    pass


TxKind = Union[Deploy, Register, Transfer, Sell, FaucetClaim]

_KIND_CATEGORY = {
    Deploy: "Deploy",
    Register: "Register",
    Transfer: "Transfer",
    Sell: "Sell",
    FaucetClaim: "FaucetClaim",
}


def kind_category(kind: TxKind) -> str:
    return _KIND_CATEGORY[type(kind)]


def kind_to_canonical(kind: TxKind) -> dict:
    if isinstance(kind, Deploy):
        return {"code_size": kind.code_size, "type": "deploy"}
    if isinstance(kind, Register):
        return {
            "metadata": kind.metadata,
            "name": kind.name,
            "product_id": kind.product_id,
            "type": "register",
        }
    if isinstance(kind, Transfer):
        return {
            "new_owner": kind.new_owner,
            "product_id": kind.product_id,
            "type": "transfer",
        }
    if isinstance(kind, Sell):
        return {
            "consumer": kind.consumer,
            "product_id": kind.product_id,
            "type": "sell",
        }
    if isinstance(kind, FaucetClaim):
        return {"type": "faucet_claim"}
    raise TypeError(f"unknown transaction kind {kind!r}")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


def _as_int(value: Any, name: str, minimum: int = 0) -> int:
    _require(isinstance(value, int) and not isinstance(value, bool), f"{name} must be an integer")
    _require(value >= minimum, f"{name} must be >= {minimum}")
    return value


def _as_str(value: Any, name: str) -> str:
    _require(isinstance(value, str), f"{name} must be a string")
    return value


def _as_address(value: Any, name: str) -> str:
    _require(is_address_str(value), f"{name} must be a 0x-prefixed 20-byte hex address")
    return value


def kind_from_canonical(doc: Mapping[str, Any]) -> TxKind:
    _require(isinstance(doc, Mapping), "kind must be an object")
    kind_type = doc.get("type")
    if kind_type == "deploy":
        _require(set(doc) == {"type", "code_size"}, "deploy kind has fields type, code_size")
        return Deploy(code_size=_as_int(doc["code_size"], "code_size"))
    if kind_type == "register":
        _require(
            set(doc) == {"type", "product_id", "name", "metadata"},
            "register kind has fields type, product_id, name, metadata",
        )
        return Register(
            product_id=_as_str(doc["product_id"], "product_id"),
            name=_as_str(doc["name"], "name"),
            metadata=_as_str(doc["metadata"], "metadata"),
        )
    if kind_type == "transfer":
        _require(
            set(doc) == {"type", "product_id", "new_owner"},
            "transfer kind has fields type, product_id, new_owner",
        )
        return Transfer(
            product_id=_as_str(doc["product_id"], "product_id"),
            new_owner=_as_address(doc["new_owner"], "new_owner"),
        )
    if kind_type == "sell":
        _require(
            set(doc) == {"type", "product_id", "consumer"},
            "sell kind has fields type, product_id, consumer",
        )
        return Sell(
            product_id=_as_str(doc["product_id"], "product_id"),
            consumer=_as_address(doc["consumer"], "consumer"),
        )
    if kind_type == "faucet_claim":
        _require(set(doc) == {"type"}, "faucet_claim kind has field type only")
        return FaucetClaim()
    raise ValueError(f"unknown transaction kind type {kind_type!r}")


# ---------------------------------------------------------------------------
# Envelopes and receipts


@dataclass(frozen=True)
class TxEnvelope:
    sender: str
    nonce: int
    kind: TxKind
    gas_price: int
    signature: str

    def to_canonical(self) -> dict:
        return {
            "gas_price": self.gas_price,
            "kind": kind_to_canonical(self.kind),
            "nonce": self.nonce,
            "sender": self.sender,
            "signature": self.signature,
        }

    @classmethod
    def from_canonical(cls, doc: Mapping[str, Any]) -> "TxEnvelope":
        _require(isinstance(doc, Mapping), "transaction must be an object")
        _require(
            set(doc) == {"gas_price", "kind", "nonce", "sender", "signature"},
            "transaction has fields gas_price, kind, nonce, sender, signature",
        )
        return cls(
            sender=_as_address(doc["sender"], "sender"),
            nonce=_as_int(doc["nonce"], "nonce"),
            kind=kind_from_canonical(doc["kind"]),
            gas_price=_as_int(doc["gas_price"], "gas_price"),
            signature=_as_str(doc["signature"], "signature"),
        )


def signing_payload(
    chain_id: int, sender: str, nonce: int, kind: TxKind, gas_price: int
) -> bytes:
    """Canonical bytes a sender signs; chain_id binding bars cross-chain replay."""
    return canonical_serialize(
        {
            "chain_id": chain_id,
            "gas_price": gas_price,
            "kind": kind_to_canonical(kind),
            "nonce": nonce,
            "sender": sender,
        }
    )


def make_tx(
    key: KeyPair, chain_id: int, nonce: int, kind: TxKind, gas_price: int
) -> TxEnvelope:
    payload = signing_payload(chain_id, key.address, nonce, kind, gas_price)
    return TxEnvelope(
        sender=key.address,
        nonce=nonce,
        kind=kind,
        gas_price=gas_price,
        signature=key.sign(payload),
    )


def tx_hash(tx: TxEnvelope) -> str:
    return hash_obj(tx.to_canonical())


@dataclass(frozen=True)
class Receipt:
    tx_hash: str
    accepted: bool
    gas_used: int
    fee: int
    error: Optional[str] = None

    def to_canonical(self) -> dict:
        return {
            "accepted": self.accepted,
            "error": self.error,
            "fee": self.fee,
            "gas_used": self.gas_used,
            "tx_hash": self.tx_hash,
        }


# ---------------------------------------------------------------------------
# State


@dataclass(frozen=True)
class Account:
    address: str
    role: Role
    balance: int
    nonce: int = 0
    last_faucet_claim: Optional[int] = None
    public_key: str = ""

    def to_canonical(self) -> dict:
        return {
            "address": self.address,
            "balance": self.balance,
            "last_faucet_claim": self.last_faucet_claim,
            "nonce": self.nonce,
            "public_key": self.public_key,
            "role": self.role.value,
        }


@dataclass(frozen=True)
class ProductRecord:
    product_id: str
    name: str
    metadata: str
    manufacturer: str
    current_owner: str
    status: Status
    history: Tuple[str, ...]
    registered_at: int

    def to_canonical(self) -> dict:
        return {
            "current_owner": self.current_owner,
            "history": list(self.history),
            "manufacturer": self.manufacturer,
            "metadata": self.metadata,
            "name": self.name,
            "product_id": self.product_id,
            "registered_at": self.registered_at,
            "status": self.status.value,
        }


@dataclass(frozen=True)
class ContractInfo:
    address: str
    deployer: str

    def to_canonical(self) -> dict:
        return {"address": self.address, "deployer": self.deployer}


@dataclass(frozen=True)
class RegistryState:
    chain_id: int
    contract: Optional[ContractInfo]
    accounts: Mapping[str, Account]
    products: Mapping[str, ProductRecord]

    def to_canonical(self) -> dict:
        return {
            "accounts": {a: acct.to_canonical() for a, acct in self.accounts.items()},
            "chain_id": self.chain_id,
            "contract": self.contract.to_canonical() if self.contract else None,
            "products": {p: rec.to_canonical() for p, rec in self.products.items()},
        }


def state_commitment(state: RegistryState) -> str:
    """Hash of the canonical state; maps serialize in sorted key order."""
    return hash_obj(state.to_canonical())


@dataclass(frozen=True)
class TxContext:
    block_index: int
    timestamp: int
    sealer: str
    gas_params: gas_model.GasParams
    faucet_amount: int
    faucet_cooldown: int


@dataclass(frozen=True)
class VerificationResult:
    exists: bool
    status: Optional[Status] = None
    manufacturer: Optional[str] = None
    current_owner: Optional[str] = None
    history: Tuple[str, ...] = ()


def contract_address(sender: str, nonce: int) -> str:
    """Trailing 20 bytes of sha256(sender bytes || nonce as 8 big-endian bytes)."""
    digest = hashlib.sha256(from_hex(sender) + nonce.to_bytes(8, "big")).digest()
    return to_hex(digest[-20:])


# ---------------------------------------------------------------------------
# Transition rules

# Check order within each variant is part of the contract; the first
# failing rule names the receipt code.


def transition_error(state: RegistryState, sender: str, kind: TxKind) -> Optional[str]:
    """First violated variant rule, or None when the effect may apply.

    Authentication, fees, and faucet cooldowns are handled by apply_tx;
    this covers only the product/contract rules, so the gas model can
    ask "would this variant execute" without simulating money.
    """
    sender_acct = state.accounts.get(sender)
    sender_role = sender_acct.role if sender_acct else None

    if isinstance(kind, Deploy):
        if state.contract is not None:
            return ALREADY_DEPLOYED
        if sender_role is None or not (is_trusted(sender_role) or sender_role is Role.AUTHORITY):
            return NOT_TRUSTED_NODE
        return None

    if isinstance(kind, Register):
        if state.contract is None:
            return NOT_DEPLOYED
        if sender_role is not Role.MANUFACTURER:
            return NOT_MANUFACTURER
        if not is_valid_product_id(kind.product_id):
            return BAD_PRODUCT_ID
        if len(kind.metadata.encode("utf-8")) > MAX_METADATA_BYTES:
            return BAD_METADATA
        if kind.product_id in state.products:
            return DUPLICATE_PRODUCT_ID
        return None

    if isinstance(kind, Transfer):
        product = state.products.get(kind.product_id)
        if product is None:
            return UNKNOWN_PRODUCT
        if product.status is not Status.AVAILABLE:
            return PRODUCT_UNAVAILABLE
        if product.current_owner != sender:
            return NOT_OWNER
        target = state.accounts.get(kind.new_owner)
        if target is None or not is_trusted(target.role):
            return NOT_TRUSTED_NODE
        return None

    if isinstance(kind, Sell):
        product = state.products.get(kind.product_id)
        if product is None:
            return UNKNOWN_PRODUCT
        if product.status is not Status.AVAILABLE:
            return PRODUCT_UNAVAILABLE
        if product.current_owner != sender:
            return NOT_OWNER
        target = state.accounts.get(kind.consumer)
        if target is None or target.role is not Role.CONSUMER:
            return NOT_CONSUMER
        return None

    if isinstance(kind, FaucetClaim):
        return None

    raise TypeError(f"unknown transaction kind {kind!r}")


def _apply_effect(state: RegistryState, tx: TxEnvelope, ctx: TxContext) -> RegistryState:
    kind = tx.kind
    if isinstance(kind, Deploy):
        info = ContractInfo(address=contract_address(tx.sender, tx.nonce), deployer=tx.sender)
        return replace(state, contract=info)
    if isinstance(kind, Register):
        record = ProductRecord(
            product_id=kind.product_id,
            name=kind.name,
            metadata=kind.metadata,
            manufacturer=tx.sender,
            current_owner=tx.sender,
            status=Status.AVAILABLE,
            history=(tx.sender,),
            registered_at=ctx.block_index,
        )
        products = dict(state.products)
        products[kind.product_id] = record
        return replace(state, products=products)
    if isinstance(kind, Transfer):
        product = state.products[kind.product_id]
        products = dict(state.products)
        products[kind.product_id] = replace(
            product,
            current_owner=kind.new_owner,
            history=product.history + (kind.new_owner,),
        )
        return replace(state, products=products)
    if isinstance(kind, Sell):
        product = state.products[kind.product_id]
        products = dict(state.products)
        products[kind.product_id] = replace(
            product,
            current_owner=kind.consumer,
            status=Status.UNAVAILABLE,
            history=product.history + (kind.consumer,),
        )
        return replace(state, products=products)
    raise TypeError(f"no effect for transaction kind {kind!r}")


def _charge_and_bump(
    state: RegistryState, payer: str, sealer: str, fee_wei: int
) -> RegistryState:
    """Debit payer / credit sealer and bump the payer nonce, in one copy."""
    accounts = dict(state.accounts)
    payer_acct = accounts[payer]
    accounts[payer] = replace(
        payer_acct, nonce=payer_acct.nonce + 1, balance=payer_acct.balance - fee_wei
    )
    if fee_wei:
        sealer_acct = accounts[sealer]
        accounts[sealer] = replace(sealer_acct, balance=sealer_acct.balance + fee_wei)
    return replace(state, accounts=accounts)


def apply_tx(
    state: RegistryState, tx: TxEnvelope, ctx: TxContext
) -> Tuple[RegistryState, Receipt]:
    """Pure transition: authenticate, meter, settle, then apply the variant."""
    txh = tx_hash(tx)
    params = ctx.gas_params
    kind_canonical = kind_to_canonical(tx.kind)
    is_faucet = isinstance(tx.kind, FaucetClaim)

    def assessed_gas() -> int:
        return 0 if is_faucet else gas_model.intrinsic_gas(kind_canonical, params)

    acct = state.accounts.get(tx.sender)
    payload = signing_payload(state.chain_id, tx.sender, tx.nonce, tx.kind, tx.gas_price)
    if acct is None or not verify(acct.public_key, payload, tx.signature):
        gas_used = assessed_gas()
        return state, Receipt(
            txh, False, gas_used, gas_model.fee(gas_used, tx.gas_price), BAD_SIGNATURE
        )
    if tx.nonce != acct.nonce:
        gas_used = assessed_gas()
        return state, Receipt(
            txh, False, gas_used, gas_model.fee(gas_used, tx.gas_price), BAD_NONCE
        )

    if is_faucet:
        accounts = dict(state.accounts)
        granted = (
            acct.last_faucet_claim is None
            or ctx.timestamp - acct.last_faucet_claim >= ctx.faucet_cooldown
        )
        if granted:
            accounts[tx.sender] = replace(
                acct,
                nonce=acct.nonce + 1,
                balance=acct.balance + ctx.faucet_amount,
                last_faucet_claim=ctx.timestamp,
            )
            return replace(state, accounts=accounts), Receipt(txh, True, 0, 0, None)
        accounts[tx.sender] = replace(acct, nonce=acct.nonce + 1)
        return replace(state, accounts=accounts), Receipt(txh, False, 0, 0, FAUCET_COOLDOWN)

    err = transition_error(state, tx.sender, tx.kind)
    intrinsic = gas_model.intrinsic_gas(kind_canonical, params)
    gas_used = intrinsic if err else intrinsic + gas_model.storage_gas(kind_canonical, params)
    fee_wei = gas_model.fee(gas_used, tx.gas_price)

    if acct.balance < fee_wei:
        gas_used = intrinsic
        fee_wei = gas_model.fee(intrinsic, tx.gas_price)
        if acct.balance < fee_wei:
            gas_used, fee_wei = 0, 0
        charged = _charge_and_bump(state, tx.sender, ctx.sealer, fee_wei)
        return charged, Receipt(txh, False, gas_used, fee_wei, INSUFFICIENT_FUNDS)

    charged = _charge_and_bump(state, tx.sender, ctx.sealer, fee_wei)
    if err is not None:
        return charged, Receipt(txh, False, gas_used, fee_wei, err)
    return _apply_effect(charged, tx, ctx), Receipt(txh, True, gas_used, fee_wei, None)


def verify_product(state: RegistryState, product_id: str) -> VerificationResult:
    """Gas-free read; exists=False flags a suspected counterfeit."""
    product = state.products.get(product_id)
    if product is None:
        return VerificationResult(exists=False)
    return VerificationResult(
        exists=True,
        status=product.status,
        manufacturer=product.manufacturer,
        current_owner=product.current_owner,
        history=product.history,
    )
