#!/usr/bin/env python3
"""Independent reference computations for the frozen test vectors.

Run with `python3 vectors.py`; the printed values are pinned in the Rust tests.
"""
import hashlib
import json


def merkle_root(leaves):
    level = [hashlib.sha256(b"\x00" + len(l).to_bytes(8, "big") + l).digest() for l in leaves]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            a, b = level[i], level[i + 1]
            nxt.append(hashlib.sha256(b"\x01" + len(a).to_bytes(8, "big") + a + len(b).to_bytes(8, "big") + b).digest())
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


BOOT = [
    (0, b"kettle-sim firmware 1.0"),
    (1, b"vmlinuz-6.8 kettle"),
    (2, b"console=ttyS0 ro init=/sbin/kettle-init"),
    (3, b"initrd kettle 0.4.0"),
    (4, b"kettle-base-image 0.4.0"),
    (5, b"kettle orchestrator 0.4.0"),
]


def measure(components):
    reg = bytes(48)
    for tag, content in components:
        reg = hashlib.sha384(reg + hashlib.sha384(bytes([tag]) + content).digest()).digest()
    return reg


SUBJECT = "1d1ea25c371d4f6de8d6e3c26fdad2238" + "0f1e2d3c4b5a69788796a5b4c3d2e1f"
COMMIT = "a1b2c3d4" + "e5f60718293a4b5c6d7e8f90a1b2c3d4e5f60718"[:32]
SERDE = "9a8e94ea" + "00112233445566778899aabbccddeeff0011223344556677"
SERDE = SERDE + "8" * (64 - len(SERDE))


def leaf(label, digest_hex):
    return label.encode() + b"\x00" + bytes.fromhex(digest_hex)


# Lock manifest behind the provenance listing: one dependency, one tool.
LISTING_LEAVES = [
    leaf("src.commit", hashlib.sha256(bytes.fromhex(COMMIT)).hexdigest()),
    leaf("src.tree", "33" * 32),
    leaf("lockfile", "44" * 32),
    leaf("dep.serde@1.0.228", SERDE),
    leaf("tool.rustc", "55" * 32),
]
LISTING_ROOT = merkle_root(LISTING_LEAVES).hex()


def random_manifests(count=24):
    """Deterministic pseudo-random leaf sets; sizes cover odd and even levels."""
    out = []
    for m in range(count):
        n = 1 + (m * 13) % 37
        out.append([(f"manifest-{m}/leaf-{j}".encode()) * (j % 3 + 1) for j in range(n)])
    return out

STATEMENT = {
    "_type": "https://in-toto.io/Statement/v1",
    "subject": [{"name": "my-app", "digest": {"sha256": SUBJECT}}],
    "predicateType": "https://slsa.dev/provenance/v1",
    "predicate": {
        "buildDefinition": {
            "buildType": "https://kettle.confidential.ai/cargo-build/v1",
            "externalParameters": {"repository": "https://github.com/org/repo", "ref": "refs/heads/main"},
            "internalParameters": {
                "tee_platform": "sev-snp",
                "kettle_version": "0.4.0",
                "input_merkle_root": LISTING_ROOT,
                "build_nonce": "22" * 32,
                "source_tree_digest": "33" * 32,
                "lockfile_sha256": "44" * 32,
                "toolchain": [{"name": "rustc", "sha256": "55" * 32}],
            },
            "resolvedDependencies": [
                {"uri": "git+https://github.com/org/repo@refs/heads/main", "digest": {"gitCommit": COMMIT}},
                {"uri": "pkg:cargo/serde@1.0.228", "digest": {"sha256": SERDE}},
            ],
        },
        "runDetails": {
            "builder": {"id": "https://kettle.confidential.ai/tee-builder/v1"},
            "metadata": {
                "invocationId": "build-12345",
                "startedOn": "2026-01-15T10:30:00Z",
                "finishedOn": "2026-01-15T10:35:00Z",
            },
        },
    },
}


def canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


if __name__ == "__main__":
    print("sha256(empty)     ", hashlib.sha256(b"").hexdigest())
    print("merkle(a,b,c,d)   ", merkle_root([b"a", b"b", b"c", b"d"]).hex())
    print("merkle(a)         ", merkle_root([b"a"]).hex())
    print("merkle(a,b,c)     ", merkle_root([b"a", b"b", b"c"]).hex())
    print("boot measurement  ", measure(BOOT).hex())
    print("subject", SUBJECT, len(SUBJECT))
    print("commit ", COMMIT, len(COMMIT))
    print("serde  ", SERDE, len(SERDE))
    print("listing root      ", LISTING_ROOT)
    for m, leaves in enumerate(random_manifests()):
        print(f"manifest {m:2d} n={len(leaves):2d}", merkle_root(leaves).hex())
    print("statement sha256  ", hashlib.sha256(canonical(STATEMENT)).hexdigest())
    print(canonical(STATEMENT).decode())
