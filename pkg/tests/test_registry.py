import hashlib

import pytest

from acprov import canonical, gas, ledger, registry
from acprov.registry import (
    Deploy,
    FaucetClaim,
    Register,
    Role,
    Sell,
    Status,
    Transfer,
)

import support

PRICE = 10**9
HALF_ETH = 5 * 10**17


def mktx(key, nonce, kind, chain_id=5, price=PRICE):
    return registry.make_tx(key, chain_id, nonce, kind, price)


@pytest.fixture()
def deployed(genesis, state, keys):
    """State with the contract deployed by the manufacturer at nonce 0."""
    tx = mktx(keys["manufacturer"], 0, Deploy(code_size=100))
    state, receipt = registry.apply_tx(state, tx, support.ctx_for(genesis, 1))
    assert receipt.accepted, receipt.error
    return state


@pytest.fixture()
def registered(genesis, deployed, keys):
    """Deployed state plus product P-001 registered by the manufacturer."""
    tx = mktx(keys["manufacturer"], 1, Register(product_id="P-001", name="Widget", metadata=""))
    state, receipt = registry.apply_tx(deployed, tx, support.ctx_for(genesis, 2))
    assert receipt.accepted, receipt.error
    return state


class TestKindCodec:
    KINDS = (
        Deploy(code_size=7),
        Register(product_id="P-1", name="N", metadata="m"),
        Transfer(product_id="P-1", new_owner="0x" + "a" * 40),
        Sell(product_id="P-1", consumer="0x" + "b" * 40),
        FaucetClaim(),
    )

    def test_round_trip(self):
        for kind in self.KINDS:
            doc = registry.kind_to_canonical(kind)
            assert registry.kind_from_canonical(doc) == kind, f"round trip broke for {kind}"

    def test_category_names(self):
        cats = [registry.kind_category(k) for k in self.KINDS]
        assert cats == ["Deploy", "Register", "Transfer", "Sell", "FaucetClaim"]

    def test_unknown_type_rejected(self):
        with pytest.raises(ValueError):
            registry.kind_from_canonical({"type": "mint"})

    def test_missing_field_rejected(self):
        with pytest.raises(ValueError):
            registry.kind_from_canonical({"type": "deploy"})

    def test_bool_is_not_an_int(self):
        with pytest.raises(ValueError):
            registry.kind_from_canonical({"type": "deploy", "code_size": True})

    def test_malformed_address_rejected(self):
        with pytest.raises(ValueError):
            registry.kind_from_canonical(
                {"type": "sell", "product_id": "P-1", "consumer": "0xABC"}
            )


class TestProductIds:
    def test_valid_ids(self):
        for pid in ("P-001", "a", "A.B_C-9", "x" * 64):
            assert registry.is_valid_product_id(pid), f"{pid!r} should be valid"

    def test_invalid_ids(self):
        for pid in ("", "has space", "x" * 65, "ünït", "semi;colon", None, 7):
            assert not registry.is_valid_product_id(pid), f"{pid!r} should be invalid"


class TestContractAddress:
    def test_derivation_by_hand(self, keys):
        sender = keys["manufacturer"].address
        digest = hashlib.sha256(
            canonical.from_hex(sender) + (3).to_bytes(8, "big")
        ).digest()
        assert registry.contract_address(sender, 3) == "0x" + digest[-20:].hex()

    def test_nonce_changes_address(self, keys):
        sender = keys["manufacturer"].address
        assert registry.contract_address(sender, 0) != registry.contract_address(sender, 1)


class TestAuthentication:
    def test_bad_signature_settles_nothing(self, genesis, state, keys):
        tx = mktx(keys["manufacturer"], 0, Deploy(code_size=100))
        bad = registry.TxEnvelope(
            sender=tx.sender,
            nonce=tx.nonce,
            kind=tx.kind,
            gas_price=tx.gas_price,
            signature="0x" + "0" * 128,
        )
        after, receipt = registry.apply_tx(state, bad, support.ctx_for(genesis, 1))
        assert not receipt.accepted and receipt.error == registry.BAD_SIGNATURE
        assert receipt.gas_used > 0 and receipt.fee == receipt.gas_used * PRICE
        assert registry.state_commitment(after) == registry.state_commitment(state), (
            "unauthenticated tx must not touch state"
        )

    def test_unknown_sender_is_bad_signature(self, genesis, state):
        ghost = support.key_for("ghost")
        tx = mktx(ghost, 0, FaucetClaim())
        after, receipt = registry.apply_tx(state, tx, support.ctx_for(genesis, 1))
        assert receipt.error == registry.BAD_SIGNATURE
        assert registry.state_commitment(after) == registry.state_commitment(state)

    def test_chain_id_is_bound_into_the_signature(self, genesis, state, keys):
        foreign = mktx(keys["manufacturer"], 0, Deploy(code_size=100), chain_id=6)
        after, receipt = registry.apply_tx(state, foreign, support.ctx_for(genesis, 1))
        assert receipt.error == registry.BAD_SIGNATURE, "cross-chain replay must fail"

    def test_stale_nonce_rejected_without_state_change(self, genesis, deployed, keys):
        replayed = mktx(keys["manufacturer"], 0, Deploy(code_size=100))
        after, receipt = registry.apply_tx(deployed, replayed, support.ctx_for(genesis, 2))
        assert receipt.error == registry.BAD_NONCE
        assert registry.state_commitment(after) == registry.state_commitment(deployed)

    def test_future_nonce_rejected(self, genesis, state, keys):
        tx = mktx(keys["manufacturer"], 5, Deploy(code_size=100))
        _, receipt = registry.apply_tx(state, tx, support.ctx_for(genesis, 1))
        assert receipt.error == registry.BAD_NONCE

    def test_variant_rejection_still_bumps_nonce_and_charges(self, genesis, state, keys):
        tx = mktx(keys["consumer"], 0, Deploy(code_size=100))
        after, receipt = registry.apply_tx(state, tx, support.ctx_for(genesis, 1))
        assert receipt.error == registry.NOT_TRUSTED_NODE
        acct = after.accounts[keys["consumer"].address]
        assert acct.nonce == 1, "rejected-but-authenticated txs consume the nonce"
        assert acct.balance == support.ETH - receipt.fee


class TestDeploy:
    def test_success_sets_contract(self, genesis, state, keys):
        tx = mktx(keys["manufacturer"], 0, Deploy(code_size=100))
        after, receipt = registry.apply_tx(state, tx, support.ctx_for(genesis, 1))
        assert receipt.accepted
        assert after.contract is not None
        assert after.contract.deployer == keys["manufacturer"].address
        assert after.contract.address == registry.contract_address(
            keys["manufacturer"].address, 0
        )

    def test_second_deploy_rejected(self, genesis, deployed, keys):
        tx = mktx(keys["distributor"], 0, Deploy(code_size=100))
        _, receipt = registry.apply_tx(deployed, tx, support.ctx_for(genesis, 2))
        assert receipt.error == registry.ALREADY_DEPLOYED

    def test_already_deployed_wins_over_not_trusted(self, genesis, deployed, keys):
        tx = mktx(keys["consumer"], 0, Deploy(code_size=100))
        _, receipt = registry.apply_tx(deployed, tx, support.ctx_for(genesis, 2))
        assert receipt.error == registry.ALREADY_DEPLOYED

    def test_untrusted_deployer_rejected(self, genesis, state, keys):
        tx = mktx(keys["consumer"], 0, Deploy(code_size=100))
        _, receipt = registry.apply_tx(state, tx, support.ctx_for(genesis, 1))
        assert receipt.error == registry.NOT_TRUSTED_NODE


class TestRegister:
    def test_requires_deploy_first(self, genesis, state, keys):
        tx = mktx(keys["manufacturer"], 0, Register(product_id="P-001", name="W", metadata=""))
        _, receipt = registry.apply_tx(state, tx, support.ctx_for(genesis, 1))
        assert receipt.error == registry.NOT_DEPLOYED

    def test_only_manufacturers_register(self, genesis, deployed, keys):
        tx = mktx(keys["distributor"], 0, Register(product_id="P-001", name="W", metadata=""))
        _, receipt = registry.apply_tx(deployed, tx, support.ctx_for(genesis, 2))
        assert receipt.error == registry.NOT_MANUFACTURER

    def test_role_check_wins_over_bad_id(self, genesis, deployed, keys):
        tx = mktx(keys["distributor"], 0, Register(product_id="no good", name="W", metadata=""))
        _, receipt = registry.apply_tx(deployed, tx, support.ctx_for(genesis, 2))
        assert receipt.error == registry.NOT_MANUFACTURER

    def test_bad_product_id(self, genesis, deployed, keys):
        tx = mktx(keys["manufacturer"], 1, Register(product_id="has space", name="W", metadata=""))
        _, receipt = registry.apply_tx(deployed, tx, support.ctx_for(genesis, 2))
        assert receipt.error == registry.BAD_PRODUCT_ID

    def test_metadata_limit_is_bytes_not_chars(self, genesis, deployed, keys):
        # 513 two-byte chars: fits as chars, overflows as UTF-8 bytes
        meta = "ü" * 513
        tx = mktx(keys["manufacturer"], 1, Register(product_id="P-001", name="W", metadata=meta))
        _, receipt = registry.apply_tx(deployed, tx, support.ctx_for(genesis, 2))
        assert receipt.error == registry.BAD_METADATA

    def test_metadata_at_limit_accepted(self, genesis, deployed, keys):
        meta = "m" * 1024
        tx = mktx(keys["manufacturer"], 1, Register(product_id="P-001", name="W", metadata=meta))
        _, receipt = registry.apply_tx(deployed, tx, support.ctx_for(genesis, 2))
        assert receipt.accepted, receipt.error

    def test_duplicate_id(self, genesis, registered, keys):
        tx = mktx(keys["manufacturer"], 2, Register(product_id="P-001", name="W2", metadata=""))
        _, receipt = registry.apply_tx(registered, tx, support.ctx_for(genesis, 3))
        assert receipt.error == registry.DUPLICATE_PRODUCT_ID

    def test_success_effects(self, genesis, registered, keys):
        record = registered.products["P-001"]
        maker = keys["manufacturer"].address
        assert record.manufacturer == maker
        assert record.current_owner == maker
        assert record.status == Status.AVAILABLE
        assert record.history == (maker,)
        assert record.registered_at == 2


class TestTransfer:
    def test_unknown_product(self, genesis, deployed, keys):
        tx = mktx(keys["manufacturer"], 1, Transfer(product_id="P-404", new_owner=keys["distributor"].address))
        _, receipt = registry.apply_tx(deployed, tx, support.ctx_for(genesis, 2))
        assert receipt.error == registry.UNKNOWN_PRODUCT

    def test_not_owner(self, genesis, registered, keys):
        tx = mktx(keys["distributor"], 0, Transfer(product_id="P-001", new_owner=keys["retailer"].address))
        _, receipt = registry.apply_tx(registered, tx, support.ctx_for(genesis, 3))
        assert receipt.error == registry.NOT_OWNER

    def test_untrusted_target(self, genesis, registered, keys):
        tx = mktx(keys["manufacturer"], 2, Transfer(product_id="P-001", new_owner=keys["consumer"].address))
        _, receipt = registry.apply_tx(registered, tx, support.ctx_for(genesis, 3))
        assert receipt.error == registry.NOT_TRUSTED_NODE

    def test_success_appends_history(self, genesis, registered, keys):
        tx = mktx(keys["manufacturer"], 2, Transfer(product_id="P-001", new_owner=keys["distributor"].address))
        after, receipt = registry.apply_tx(registered, tx, support.ctx_for(genesis, 3))
        assert receipt.accepted, receipt.error
        record = after.products["P-001"]
        assert record.current_owner == keys["distributor"].address
        assert record.history == (keys["manufacturer"].address, keys["distributor"].address)
        assert record.status == Status.AVAILABLE


class TestSell:
    @pytest.fixture()
    def sold(self, genesis, registered, keys):
        tx = mktx(keys["manufacturer"], 2, Sell(product_id="P-001", consumer=keys["consumer"].address))
        state, receipt = registry.apply_tx(registered, tx, support.ctx_for(genesis, 3))
        assert receipt.accepted, receipt.error
        return state

    def test_unknown_product(self, genesis, deployed, keys):
        tx = mktx(keys["manufacturer"], 1, Sell(product_id="P-404", consumer=keys["consumer"].address))
        _, receipt = registry.apply_tx(deployed, tx, support.ctx_for(genesis, 2))
        assert receipt.error == registry.UNKNOWN_PRODUCT

    def test_not_owner(self, genesis, registered, keys):
        tx = mktx(keys["retailer"], 0, Sell(product_id="P-001", consumer=keys["consumer"].address))
        _, receipt = registry.apply_tx(registered, tx, support.ctx_for(genesis, 3))
        assert receipt.error == registry.NOT_OWNER

    def test_target_must_be_consumer(self, genesis, registered, keys):
        tx = mktx(keys["manufacturer"], 2, Sell(product_id="P-001", consumer=keys["retailer"].address))
        _, receipt = registry.apply_tx(registered, tx, support.ctx_for(genesis, 3))
        assert receipt.error == registry.NOT_CONSUMER

    def test_success_makes_product_unavailable(self, sold, keys):
        record = sold.products["P-001"]
        assert record.status == Status.UNAVAILABLE
        assert record.current_owner == keys["consumer"].address
        assert record.history[-1] == keys["consumer"].address

    def test_second_sell_is_product_unavailable(self, genesis, sold, keys):
        tx = mktx(keys["manufacturer"], 3, Sell(product_id="P-001", consumer=keys["consumer"].address))
        _, receipt = registry.apply_tx(sold, tx, support.ctx_for(genesis, 4))
        assert receipt.error == registry.PRODUCT_UNAVAILABLE

    def test_unavailability_wins_over_ownership(self, genesis, sold, keys):
        # the distributor never owned it AND it is already sold; the status
        # rejection must fire first so double-sell attempts are named as such
        tx = mktx(keys["distributor"], 0, Sell(product_id="P-001", consumer=keys["consumer"].address))
        _, receipt = registry.apply_tx(sold, tx, support.ctx_for(genesis, 4))
        assert receipt.error == registry.PRODUCT_UNAVAILABLE

    def test_sold_product_cannot_transfer(self, genesis, sold, keys):
        tx = mktx(keys["consumer"], 0, Transfer(product_id="P-001", new_owner=keys["distributor"].address))
        _, receipt = registry.apply_tx(sold, tx, support.ctx_for(genesis, 4))
        assert receipt.error == registry.PRODUCT_UNAVAILABLE


class TestFaucet:
    def test_grant_at_time_zero(self, genesis, state, keys):
        tx = mktx(keys["consumer"], 0, FaucetClaim())
        after, receipt = registry.apply_tx(state, tx, support.ctx_for(genesis, 1, timestamp=0))
        acct = after.accounts[keys["consumer"].address]
        assert receipt.accepted and receipt.gas_used == 0 and receipt.fee == 0
        assert acct.balance == support.ETH + HALF_ETH
        assert acct.last_faucet_claim == 0
        assert acct.nonce == 1

    def test_cooldown_edge(self, genesis, state, keys):
        first = mktx(keys["consumer"], 0, FaucetClaim())
        state, _ = registry.apply_tx(state, first, support.ctx_for(genesis, 1, timestamp=0))

        early = mktx(keys["consumer"], 1, FaucetClaim())
        state, receipt = registry.apply_tx(state, early, support.ctx_for(genesis, 2, timestamp=86_399))
        assert receipt.error == registry.FAUCET_COOLDOWN
        assert state.accounts[keys["consumer"].address].balance == support.ETH + HALF_ETH
        assert state.accounts[keys["consumer"].address].nonce == 2, (
            "a cooled-down claim still consumes the nonce"
        )

        due = mktx(keys["consumer"], 2, FaucetClaim())
        state, receipt = registry.apply_tx(state, due, support.ctx_for(genesis, 3, timestamp=86_400))
        assert receipt.accepted, receipt.error
        assert state.accounts[keys["consumer"].address].balance == support.ETH + 2 * HALF_ETH

    def test_broke_account_can_claim(self):
        broke = support.key_for("broke")
        genesis2, _ = support.five_role_genesis()
        roles = dict(genesis2.roles)
        roles[broke.address] = Role.CONSUMER
        account_keys = dict(genesis2.account_keys)
        account_keys[broke.address] = broke.public_key
        genesis2 = ledger.GenesisConfig(
            chain_id=genesis2.chain_id,
            authorities=genesis2.authorities,
            roles=roles,
            initial_balances=genesis2.initial_balances,
            account_keys=account_keys,
        )
        state = ledger.genesis_state(genesis2)
        assert state.accounts[broke.address].balance == 0
        tx = mktx(broke, 0, FaucetClaim())
        after, receipt = registry.apply_tx(state, tx, support.ctx_for(genesis2, 1, timestamp=10))
        assert receipt.accepted, "faucet claims must be payable from an empty wallet"
        assert after.accounts[broke.address].balance == HALF_ETH


class TestInsufficientFunds:
    @pytest.fixture()
    def poor_setup(self):
        """Manufacturer with just enough for intrinsic gas but not storage."""
        genesis, keys = support.five_role_genesis()
        kind = Register(product_id="P-001", name="W", metadata="")
        doc = registry.kind_to_canonical(kind)
        intrinsic = gas.intrinsic_gas(doc, genesis.gas_params)
        full = intrinsic + gas.storage_gas(doc, genesis.gas_params)
        balances = dict(genesis.initial_balances)
        poor_balance = (intrinsic + (full - intrinsic) // 2) * PRICE
        balances[keys["manufacturer"].address] = poor_balance
        genesis = ledger.GenesisConfig(
            chain_id=genesis.chain_id,
            authorities=genesis.authorities,
            roles=genesis.roles,
            initial_balances=balances,
            account_keys=genesis.account_keys,
        )
        return genesis, keys, kind, intrinsic, poor_balance

    def test_falls_back_to_intrinsic_fee(self, poor_setup):
        genesis, keys, kind, intrinsic, poor_balance = poor_setup
        state = ledger.genesis_state(genesis)
        deploy = mktx(keys["distributor"], 0, Deploy(code_size=10))
        state, receipt = registry.apply_tx(state, deploy, support.ctx_for(genesis, 1))
        assert receipt.accepted

        tx = mktx(keys["manufacturer"], 0, kind)
        after, receipt = registry.apply_tx(state, tx, support.ctx_for(genesis, 2))
        assert receipt.error == registry.INSUFFICIENT_FUNDS
        assert receipt.gas_used == intrinsic
        assert receipt.fee == intrinsic * PRICE
        acct = after.accounts[keys["manufacturer"].address]
        assert acct.balance == poor_balance - intrinsic * PRICE
        assert acct.nonce == 1
        assert "P-001" not in after.products

    def test_totally_broke_pays_nothing_but_burns_nonce(self, poor_setup):
        genesis, keys, kind, _, _ = poor_setup
        balances = dict(genesis.initial_balances)
        balances[keys["manufacturer"].address] = 0
        genesis = ledger.GenesisConfig(
            chain_id=genesis.chain_id,
            authorities=genesis.authorities,
            roles=genesis.roles,
            initial_balances=balances,
            account_keys=genesis.account_keys,
        )
        state = ledger.genesis_state(genesis)
        tx = mktx(keys["manufacturer"], 0, kind)
        after, receipt = registry.apply_tx(state, tx, support.ctx_for(genesis, 1))
        assert receipt.error == registry.INSUFFICIENT_FUNDS
        assert receipt.gas_used == 0 and receipt.fee == 0
        assert after.accounts[keys["manufacturer"].address].nonce == 1


class TestInvariants:
    def test_fee_equals_gas_times_price(self, genesis, state, keys):
        txs = [
            mktx(keys["manufacturer"], 0, Deploy(code_size=50)),
            mktx(keys["manufacturer"], 1, Register(product_id="P-001", name="W", metadata="")),
            mktx(keys["consumer"], 0, Deploy(code_size=1), price=7 * 10**8),
            mktx(keys["manufacturer"], 2, FaucetClaim()),
            mktx(keys["manufacturer"], 9, Register(product_id="P-002", name="W", metadata="")),
        ]
        for i, tx in enumerate(txs):
            state, receipt = registry.apply_tx(state, tx, support.ctx_for(genesis, i + 1))
            assert receipt.fee == receipt.gas_used * tx.gas_price, (
                f"fee/gas mismatch on tx {i}: {receipt}"
            )

    def test_supply_only_moves_via_faucet(self, genesis, state, keys):
        start = support.supply(state)
        txs = [
            (mktx(keys["manufacturer"], 0, Deploy(code_size=50)), 0),
            (mktx(keys["manufacturer"], 1, Register(product_id="P-001", name="W", metadata="")), 0),
            (mktx(keys["consumer"], 0, FaucetClaim()), HALF_ETH),
            (mktx(keys["manufacturer"], 2, Sell(product_id="P-001", consumer=keys["consumer"].address)), 0),
        ]
        minted = 0
        for i, (tx, grant) in enumerate(txs):
            state, receipt = registry.apply_tx(state, tx, support.ctx_for(genesis, i + 1))
            assert receipt.accepted, receipt.error
            minted += grant
        assert support.supply(state) == start + minted

    def test_apply_tx_does_not_mutate_input(self, genesis, state, keys):
        before = registry.state_commitment(state)
        tx = mktx(keys["manufacturer"], 0, Deploy(code_size=50))
        registry.apply_tx(state, tx, support.ctx_for(genesis, 1))
        assert registry.state_commitment(state) == before

    def test_commitment_tracks_content_not_identity(self, genesis, state, keys):
        tx = mktx(keys["manufacturer"], 0, Deploy(code_size=50))
        a, _ = registry.apply_tx(state, tx, support.ctx_for(genesis, 1))
        b, _ = registry.apply_tx(state, tx, support.ctx_for(genesis, 1))
        assert a is not b
        assert registry.state_commitment(a) == registry.state_commitment(b)


class TestVerifyProduct:
    def test_unknown_id_reports_absent(self, registered):
        result = registry.verify_product(registered, "GHOST-1")
        assert not result.exists
        assert result.history == ()

    def test_full_walk_history(self, genesis, registered, keys):
        state = registered
        walk = [
            mktx(keys["manufacturer"], 2, Transfer(product_id="P-001", new_owner=keys["distributor"].address)),
            mktx(keys["distributor"], 0, Transfer(product_id="P-001", new_owner=keys["retailer"].address)),
            mktx(keys["retailer"], 0, Sell(product_id="P-001", consumer=keys["consumer"].address)),
        ]
        for i, tx in enumerate(walk):
            state, receipt = registry.apply_tx(state, tx, support.ctx_for(genesis, i + 3))
            assert receipt.accepted, receipt.error
        result = registry.verify_product(state, "P-001")
        assert result.exists
        assert result.status == Status.UNAVAILABLE
        assert result.history == (
            keys["manufacturer"].address,
            keys["distributor"].address,
            keys["retailer"].address,
            keys["consumer"].address,
        )
        assert result.manufacturer == keys["manufacturer"].address
        assert result.current_owner == keys["consumer"].address
