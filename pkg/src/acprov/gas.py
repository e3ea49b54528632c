"""Gas metering, fee arithmetic, and the per-category gas report.

Constants are EVM-inspired.  All money math is integer wei; ETH values
are display-only conversions.  The default gas price is a calibration
constant chosen so that the three-transaction cost-model chain (one
deploy at the default code size, one registration, one sale) totals
0.000644 ETH to within a fraction of a percent; the calibration run
lives in scripts/calibrate_gas_price.py.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Iterable, Mapping, Optional

from .canonical import canonical_serialize

WEI_PER_ETH = 10**18
WEI_PER_GWEI = 10**9

DEFAULT_GAS_PRICE = 1_100_000_000  # wei per gas unit (1.1 gwei), calibrated

CATEGORIES = ("Deploy", "Register", "Transfer", "Sell", "FaucetClaim")


class InsufficientFundsError(Exception):
    """Raised by settle() when the payer cannot cover the fee."""


@dataclass(frozen=True)
class GasParams:
    base_tx: int = 21_000
    calldata_zero_byte: int = 4
    calldata_nonzero_byte: int = 16
    sstore_new: int = 20_000
    sstore_update: int = 5_000
    create_base: int = 32_000
    code_byte: int = 200
    default_code_size: int = 2_000
    default_gas_price: int = DEFAULT_GAS_PRICE

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"gas parameter {f.name} must be strictly positive")

    def to_canonical(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_canonical(cls, doc: Mapping[str, Any]) -> "GasParams":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown gas parameters: {sorted(unknown)}")
        return cls(**{k: int(v) for k, v in doc.items()})


def calldata_gas(data: bytes, params: GasParams) -> int:
    total = 0
    for byte in data:
        total += params.calldata_zero_byte if byte == 0 else params.calldata_nonzero_byte
    return total


def intrinsic_gas(kind_canonical: dict, params: GasParams) -> int:
    """base_tx plus per-byte calldata cost of the canonical kind bytes."""
    return params.base_tx + calldata_gas(canonical_serialize(kind_canonical), params)


def storage_gas(kind_canonical: dict, params: GasParams) -> int:
    """Storage-slot cost of an accepted transaction's variant effect.

    Slot counts model the contract layout: a registration writes the
    record, the owner slot, and the first history slot; a transfer
    rewrites the owner and appends one history slot; a sale rewrites
    owner and status and appends one history slot.
    """
    kind_type = kind_canonical["type"]
    if kind_type == "deploy":
        return params.create_base + params.code_byte * int(kind_canonical["code_size"])
    if kind_type == "register":
        return 3 * params.sstore_new
    if kind_type == "transfer":
        return params.sstore_update + params.sstore_new
    if kind_type == "sell":
        return 2 * params.sstore_update + params.sstore_new
    if kind_type == "faucet_claim":
        return 0
    raise ValueError(f"unknown transaction kind {kind_type!r}")


def gas_for_tx(tx, state, params: Optional[GasParams] = None) -> int:
    """Gas a transaction would consume against the given state.

    Faucet claims are fee-free by design and meter as zero even when
    rejected.  Other transactions pay base + calldata always, plus the
    variant's storage cost when the variant rules accept it.
    """
    from . import registry

    params = params or GasParams()
    kind_canonical = registry.kind_to_canonical(tx.kind)
    if kind_canonical["type"] == "faucet_claim":
        return 0
    gas = intrinsic_gas(kind_canonical, params)
    if registry.transition_error(state, tx.sender, tx.kind) is None:
        gas += storage_gas(kind_canonical, params)
    return gas


def fee(gas: int, gas_price: int) -> int:
    """Exact integer product; Python integers are arbitrary precision."""
    if gas < 0 or gas_price < 0:
        raise ValueError("gas and gas_price must be non-negative")
    return gas * gas_price


def settle(state, payer: str, sealer: str, fee_wei: int):
    """Move fee_wei from payer to sealer, returning a new state.

    Total supply is unchanged; a zero fee returns the state as-is.
    """
    from dataclasses import replace

    if fee_wei == 0:
        return state
    payer_acct = state.accounts[payer]
    if payer_acct.balance < fee_wei:
        raise InsufficientFundsError(
            f"{payer} balance {payer_acct.balance} < fee {fee_wei}"
        )
    accounts = dict(state.accounts)
    accounts[payer] = replace(payer_acct, balance=payer_acct.balance - fee_wei)
    sealer_acct = accounts[sealer]
    accounts[sealer] = replace(sealer_acct, balance=sealer_acct.balance + fee_wei)
    return replace(state, accounts=accounts)


def format_eth_exact(wei: int) -> str:
    """ETH rendering to full wei precision (18 decimal places)."""
    sign = "-" if wei < 0 else ""
    wei = abs(wei)
    return f"{sign}{wei // WEI_PER_ETH}.{wei % WEI_PER_ETH:018d}"


def format_eth(wei: int) -> str:
    """ETH display value rounded half-up to 8 decimal places."""
    value = (Decimal(wei) / WEI_PER_ETH).quantize(
        Decimal("0.00000001"), rounding=ROUND_HALF_UP
    )
    return f"{value:.8f}"


@dataclass(frozen=True)
class GasReportRow:
    category: str
    tx_count: int
    total_gas: int
    avg_gas_per_tx: int
    total_fee: int

    @property
    def total_fee_eth(self) -> str:
        return format_eth(self.total_fee)

    def to_csv_row(self) -> str:
        return (
            f"{self.category},{self.tx_count},{self.total_gas},"
            f"{self.avg_gas_per_tx},{self.total_fee},{self.total_fee_eth}"
        )


@dataclass(frozen=True)
class GasReport:
    rows: tuple  # one GasReportRow per category, fixed order
    total: GasReportRow

    @property
    def total_fee_wei(self) -> int:
        return self.total.total_fee

    @property
    def total_fee_eth_exact(self) -> str:
        return format_eth_exact(self.total.total_fee)

    @property
    def total_fee_eth(self) -> str:
        return format_eth(self.total.total_fee)

    def to_csv(self) -> str:
        lines = ["category,tx_count,total_gas,avg_gas_per_tx,total_fee_wei,total_fee_eth"]
        lines.extend(row.to_csv_row() for row in self.rows)
        lines.append(self.total.to_csv_row())
        return "\n".join(lines) + "\n"


def build_report(categorized: Iterable[tuple]) -> GasReport:
    """Aggregate (category, gas_used, fee_wei) triples into a report."""
    counts = {c: 0 for c in CATEGORIES}
    gas_totals = {c: 0 for c in CATEGORIES}
    fee_totals = {c: 0 for c in CATEGORIES}
    for category, gas_used, fee_wei in categorized:
        counts[category] += 1
        gas_totals[category] += gas_used
        fee_totals[category] += fee_wei
    rows = tuple(
        GasReportRow(
            category=c,
            tx_count=counts[c],
            total_gas=gas_totals[c],
            avg_gas_per_tx=gas_totals[c] // counts[c] if counts[c] else 0,
            total_fee=fee_totals[c],
        )
        for c in CATEGORIES
    )
    grand_count = sum(counts.values())
    grand_gas = sum(gas_totals.values())
    total = GasReportRow(
        category="TOTAL",
        tx_count=grand_count,
        total_gas=grand_gas,
        avg_gas_per_tx=grand_gas // grand_count if grand_count else 0,
        total_fee=sum(fee_totals.values()),
    )
    return GasReport(rows=rows, total=total)


def gas_report(blocks, genesis) -> GasReport:
    """Replay a validated chain and aggregate receipts by category.

    Raises ledger.ValidationFailedError if the chain does not validate.
    """
    from . import ledger, registry

    _, receipts_per_block = ledger.replay_chain(blocks, genesis)
    triples = []
    for block, receipts in zip(blocks, receipts_per_block):
        for tx, receipt in zip(block.txs, receipts):
            category = registry.kind_category(tx.kind)
            triples.append((category, receipt.gas_used, receipt.fee))
    return build_report(triples)
