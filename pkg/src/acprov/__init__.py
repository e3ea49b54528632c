"""Permissioned proof-of-authority ledger with a product provenance registry.

The package is organized one module per concern:

- canonical: canonical byte encoding and SHA-256 hashing
- crypto: Ed25519 keys, signatures, address derivation
- gas: gas metering, fee arithmetic, gas reports
- registry: the product registry state machine (accounts, products, faucet)
- ledger: blocks, proof-of-authority sealing, validation, persistence
- qr: the checksummed verification payload codec
- simnet: deterministic scenario simulator and file-level adversary
- oracle: naive reference state machine used only by tests
- cli: command line entry point
"""

__version__ = "0.1.0"
