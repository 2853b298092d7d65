"""Command-line entry points.

Every command writes machine-readable results to stdout (one JSON object per
line, or CSV for ``bench`` and ``attack-sim``) and diagnostics to stderr.
Exit codes: 0 success, 1 user error, 2 internal, transport or crypto error.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields

import click

from . import __version__
from .btree import BTree, KeyRange, Session, encode_uint, multi_range
from .btree.keys import decode_uint
from .crypto import KdfParams, derive_key_from_passphrase, open_sealed, seal
from .errors import (AuthenticationFailure, CorruptLog, CorruptStream, DomainError, EmptyCorpus, EmptyTable,
                     InvalidParams, MissingIndex, NotFound, OutOfGrant, ParseError, ProtocolError, ResourceCap,
                     SizeCap, ZeroTreeError)
from .wire.client import LocalTransport, StoreClient, parse_address
from .wire.protocol import CommitBatch, Write

log = logging.getLogger("zerotree.cli")

PASSPHRASE_ENV = "ZEROTREE_PASSPHRASE"
SERVER_ENV = "ZEROTREE_SERVER"
STORE_ENV = "ZEROTREE_STORE"
KDF_ROOT = "__kdf__"
KDF_MAGIC = b"ZTKD"
VERIFIER = b"zerotree passphrase check"
DEFAULT_CACHE = 5 * 1024 * 1024


class UserError(ZeroTreeError):
    """Bad input from the operator; maps to exit code 1."""


class WrongPassphrase(UserError):
    pass


USER_ERRORS = (UserError, NotFound, MissingIndex, ParseError, EmptyTable, EmptyCorpus, DomainError, OutOfGrant,
               SizeCap, ResourceCap, InvalidParams, ValueError, FileNotFoundError, IsADirectoryError,
               PermissionError)
INTERNAL_ERRORS = (AuthenticationFailure, CorruptStream, CorruptLog, ProtocolError, ConnectionError, OSError,
                   ZeroTreeError)


@dataclass
class CliConfig:
    server: str | None = None
    store: str | None = None
    passphrase_file: str | None = None
    bucket_size: int = 8192
    compression: float = 3.0
    cache: int = DEFAULT_CACHE
    key_format: str = "text"
    _client: StoreClient | None = field(default=None, repr=False)
    _local_store: object = field(default=None, repr=False)

    def __repr__(self) -> str:  # never echo a passphrase source's contents
        shown = ", ".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self) if not f.name.startswith("_"))
        return f"CliConfig({shown})"

    # -- connection -------------------------------------------------------

    def client(self) -> StoreClient:
        if self._client is None:
            if self.server:
                self._client = StoreClient.connect(self.server)
            elif self.store:
                from .wire.store import ObjectStore
                self._local_store = ObjectStore(self.store)
                self._client = StoreClient(LocalTransport(self._local_store))
            else:
                raise UserError(f"no server: pass --server host:port (or {SERVER_ENV}) or --store PATH")
        return self._client

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None
        if self._local_store is not None:
            self._local_store.close()
            self._local_store = None

    # -- keys -------------------------------------------------------------

    def passphrase(self) -> str:
        value = os.environ.get(PASSPHRASE_ENV)
        if value is None and self.passphrase_file:
            with open(self.passphrase_file, encoding="utf-8") as fh:
                value = fh.readline().rstrip("\r\n")
        if value is None:
            if not sys.stdin.isatty():
                raise UserError(f"no passphrase: set {PASSPHRASE_ENV} or pass --passphrase-file")
            value = click.prompt("passphrase", hide_input=True, err=True)
        if not value:
            raise UserError("passphrase must not be empty")
        return value

    def master_key(self) -> bytes:
        client = self.client()
        try:
            oid = client.get_root(KDF_ROOT)
        except NotFound:
            raise UserError("store is not initialized; run 'zerotree init' first") from None
        params, verifier = _parse_kdf_record(client.get_objects([oid])[0].blob)
        key = derive_key_from_passphrase(self.passphrase(), params)
        try:
            if open_sealed(key, oid, verifier) != VERIFIER:
                raise AuthenticationFailure("verifier mismatch")
        except AuthenticationFailure:
            raise WrongPassphrase("wrong passphrase for this store") from None
        return key

    def session(self) -> Session:
        return Session(self.client(), self.master_key(), cache_bytes=self.cache)

    def tree(self, session: Session, name: str) -> BTree:
        if name.startswith("__"):
            raise UserError("index names starting with '__' are reserved")
        return BTree(session, name, bucket_size=self.bucket_size, compression=self.compression)

    def encode_key(self, text: str) -> bytes:
        try:
            if self.key_format == "hex":
                return bytes.fromhex(text)
            if self.key_format == "uint":
                return encode_uint(int(text))
        except (ValueError, OverflowError):
            raise UserError(f"key {text!r} is not a valid {self.key_format} key") from None
        return text.encode("utf-8")

    def show_key(self, key: bytes):
        if self.key_format == "hex":
            return key.hex()
        if self.key_format == "uint" and len(key) == 8:
            return decode_uint(key)
        return _text_or_b64(key)


def _text_or_b64(data: bytes):
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError:
        return {"b64": base64.b64encode(data).decode("ascii")}


def _kdf_record(params: KdfParams, verifier: bytes) -> bytes:
    return KDF_MAGIC + params.to_bytes() + verifier


def _parse_kdf_record(blob: bytes | None) -> tuple[KdfParams, bytes]:
    size = len(KDF_MAGIC) + len(KdfParams().to_bytes())
    if blob is None or len(blob) <= size or not blob.startswith(KDF_MAGIC):
        raise CorruptStream("key-derivation record is missing or malformed")
    return KdfParams.from_bytes(blob[len(KDF_MAGIC):size]), blob[size:]


def emit(obj) -> None:
    click.echo(json.dumps(obj, sort_keys=True, separators=(",", ":")))


def info(message: str) -> None:
    click.echo(message, err=True)


def _value_entry(cfg: CliConfig, key: bytes, value: bytes) -> dict:
    out = {"key": cfg.show_key(key)}
    decoded = _text_or_b64(value)
    if isinstance(decoded, str):
        out["value"] = decoded
    else:
        out["value_b64"] = decoded["b64"]
    return out


def _range(cfg: CliConfig, start: str | None, stop: str | None, prefix: str | None) -> KeyRange:
    if prefix is not None:
        if start is not None or stop is not None:
            raise UserError("--prefix cannot be combined with --start/--stop")
        return _byte_prefix(cfg.encode_key(prefix))
    return KeyRange(cfg.encode_key(start) if start is not None else None,
                    cfg.encode_key(stop) if stop is not None else None)


def _byte_prefix(prefix: bytes) -> KeyRange:
    """Keys starting with ``prefix`` byte for byte."""
    head = prefix.rstrip(b"\xff")
    if not head:
        return KeyRange(prefix or None, None)
    return KeyRange(prefix, head[:-1] + bytes((head[-1] + 1,)))


def _read_input(path: str) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    with open(path, "rb") as fh:
        return fh.read()


def _field_value(text: str):
    """``--where`` values: integers stay integers, anything else is a string."""
    try:
        return int(text)
    except ValueError:
        return text


def _where(items: tuple[str, ...]):
    from .query import Condition

    conds = []
    for item in items:
        name, sep, raw = item.partition("=")
        if not sep or not name:
            raise UserError(f"--where expects field=value, got {item!r}")
        if ".." in raw:
            low, high = raw.split("..", 1)
            conds.append(Condition.between(name, _field_value(low) if low else None,
                                           _field_value(high) if high else None))
        else:
            conds.append(Condition.eq(name, _field_value(raw)))
    return conds


def _matching_ids(catalog, cond, limit: int | None) -> list[int]:
    sets = [t for _, t in catalog.field_index(cond.field).sets(cond.range)]
    ids = sorted({decode_uint(k) for part in multi_range([(t, KeyRange()) for t in sets], resolve=False)
                  for k, _ in part})
    return ids[:limit] if limit is not None else ids


# -- command group ----------------------------------------------------------

pass_cfg = click.make_pass_decorator(CliConfig)

range_options = [
    click.option("--start", help="Inclusive lower key."),
    click.option("--stop", help="Exclusive upper key."),
    click.option("--prefix", help="All keys with this prefix."),
]


def with_range(fn):
    for opt in reversed(range_options):
        fn = opt(fn)
    return fn


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="zerotree")
@click.option("--server", envvar=SERVER_ENV, metavar="HOST:PORT", help="Blob server address.")
@click.option("--store", envvar=STORE_ENV, type=click.Path(file_okay=False),
              help="Store directory (serve, or local access without a server).")
@click.option("--passphrase-file", type=click.Path(dir_okay=False), help="File whose first line is the passphrase.")
@click.option("--bucket-size", default=8192, show_default=True, type=click.IntRange(min=64),
              help="Transmitted bucket size target in bytes.")
@click.option("--compression", default=3.0, show_default=True, type=click.FloatRange(min=1.0),
              help="Expected compression ratio; buckets split at bucket size times this.")
@click.option("--cache", default=DEFAULT_CACHE, show_default=True, type=click.IntRange(min=0),
              help="Client bucket cache in bytes.")
@click.option("--key-format", type=click.Choice(["text", "hex", "uint"]), default="text", show_default=True,
              help="How keys on the command line and in output are written.")
@click.option("-v", "--verbose", count=True, help="Log to stderr (repeat for debug).")
@click.pass_context
def cli(ctx, server, store, passphrase_file, bucket_size, compression, cache, key_format, verbose):
    """Encrypted B-Tree indexes over an untrusted blob server."""
    logging.basicConfig(stream=sys.stderr, level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = CliConfig(server, store, passphrase_file, bucket_size, compression, cache, key_format)
    ctx.obj = cfg
    ctx.call_on_close(cfg.close)


@cli.command()
@click.option("--listen", default="127.0.0.1:7070", show_default=True, metavar="HOST:PORT",
              help="Bind address; port 0 picks a free port.")
@click.option("--no-fsync", is_flag=True, help="Skip fsync on commit (tests only).")
@pass_cfg
def serve(cfg: CliConfig, listen, no_fsync):
    """Run the blob server until killed. Prints the bound address as JSON."""
    from .wire.server import BlobServer
    from .wire.store import ObjectStore

    if not cfg.store:
        raise UserError(f"serve needs --store PATH (or {STORE_ENV})")
    host, port = parse_address(listen)
    with ObjectStore(cfg.store, fsync=not no_fsync) as store:
        server = BlobServer((host, port), store)
        try:
            emit({"listening": "%s:%d" % server.address, "store": str(cfg.store)})
            sys.stdout.flush()
            server.serve_forever()
        except KeyboardInterrupt:
            info("shutting down")
        finally:
            server.server_close()


@cli.command()
@click.option("--kdf-n", default=2**15, show_default=True, type=int, help="scrypt cost parameter N.")
@click.option("--kdf-r", default=8, show_default=True, type=int)
@click.option("--kdf-p", default=1, show_default=True, type=int)
@pass_cfg
def init(cfg: CliConfig, kdf_n, kdf_r, kdf_p):
    """Record key-derivation parameters on the server for a new passphrase."""
    client = cfg.client()
    try:
        client.get_root(KDF_ROOT)
    except NotFound:
        pass
    else:
        raise UserError("store is already initialized")
    params = KdfParams(n=kdf_n, r=kdf_r, p=kdf_p)
    params.validate()
    key = derive_key_from_passphrase(cfg.passphrase(), params)
    oid = client.allocate(1)[0]
    client.commit(CommitBatch([Write(oid, None, _kdf_record(params, seal(key, oid, VERIFIER)))], [(KDF_ROOT, oid)]))
    emit({"initialized": True, "kdf": {"n": kdf_n, "r": kdf_r, "p": kdf_p}})


@cli.command()
@click.argument("index")
@click.argument("key")
@click.argument("value", required=False)
@click.option("--value-file", type=click.Path(dir_okay=False, allow_dash=True), help="Read the value from a file.")
@click.option("--record", is_flag=True, help="VALUE is a JSON object indexed field by field; KEY is its integer id.")
@pass_cfg
def put(cfg: CliConfig, index, key, value, value_file, record):
    """Insert or replace one key."""
    if (value is None) == (value_file is None):
        raise UserError("give exactly one of VALUE or --value-file")
    data = _read_input(value_file) if value_file is not None else value.encode("utf-8")
    session = cfg.session()
    if record:
        from .query import IndexCatalog

        try:
            ident = int(key)
            fields_ = json.loads(data)
        except ValueError as exc:
            raise UserError(f"--record needs an integer KEY and a JSON object VALUE: {exc}") from None
        if not isinstance(fields_, dict):
            raise UserError("--record VALUE must be a JSON object")
        tree = cfg.tree(session, index)
        old = tree.get(encode_uint(ident))
        catalog = IndexCatalog(session, f"{index}/", bucket_size=cfg.bucket_size, compression=cfg.compression)
        try:
            if old is not None:
                catalog.remove_object(ident, json.loads(old))
            catalog.index_object(ident, fields_)
        except TypeError as exc:
            raise UserError(str(exc)) from None
        tree.insert(encode_uint(ident), json.dumps(fields_, sort_keys=True).encode())
        raw_key = encode_uint(ident)
    else:
        tree = cfg.tree(session, index)
        raw_key = cfg.encode_key(key)
        tree.insert(raw_key, data)
    session.commit()
    emit({"index": index, "key": cfg.show_key(raw_key) if not record else int(key), "bytes": len(data)})


@cli.command()
@click.argument("index")
@click.argument("key")
@click.option("--raw", is_flag=True, help="Write the value bytes to stdout unchanged.")
@pass_cfg
def get(cfg: CliConfig, index, key, raw):
    """Look up one key."""
    session = cfg.session()
    raw_key = cfg.encode_key(key)
    try:
        value = cfg.tree(session, index).search(raw_key)
    except NotFound:
        raise UserError(f"key {key!r} not found in {index!r}") from None
    if raw:
        sys.stdout.buffer.write(value)
        sys.stdout.flush()
    else:
        emit(_value_entry(cfg, raw_key, value))


@cli.command()
@click.argument("index")
@with_range
@click.option("--limit", type=click.IntRange(min=1), help="Stop after this many results.")
@click.option("--count", "count_only", is_flag=True, help="Print an estimated count instead of entries.")
@click.option("--where", multiple=True, metavar="FIELD=VALUE",
              help="Record condition (repeat for AND); VALUE may be LOW..HIGH.")
@click.option("--sort", "sort_field", help="Field ordering --where results.")
@pass_cfg
def query(cfg: CliConfig, index, start, stop, prefix, limit, count_only, where, sort_field):
    """Range scan over an index, or an AND/OR query over records stored with 'put --record'."""
    session = cfg.session()
    if where:
        from .query import IndexCatalog, query_and_prefetch

        conds = _where(where)
        catalog = IndexCatalog(session, f"{index}/", bucket_size=cfg.bucket_size, compression=cfg.compression)
        if len(conds) == 1:
            ids = _matching_ids(catalog, conds[0], limit)
        elif len(conds) == 2:
            ids = query_and_prefetch(catalog, conds[0], conds[1], sort_field or conds[0].field, limit)
        else:
            raise UserError("--where takes one or two conditions")
        records = cfg.tree(session, index).parallel_traverse([encode_uint(i) for i in ids])
        for i in ids:
            rec = records.get(encode_uint(i))
            emit({"id": i, "record": json.loads(rec) if rec is not None else None})
        return
    tree = cfg.tree(session, index)
    rng = _range(cfg, start, stop, prefix)
    if count_only:
        emit({"index": index, "estimate": tree.estimate_count(rng)})
        return
    entries = tree.range_iterate(rng, limit) if limit else tree.range_fetch_all(rng)
    for k, v in entries:
        emit(_value_entry(cfg, k, v))


@cli.command("ft-index")
@click.argument("field_name", metavar="FIELD")
@click.argument("source", type=click.Path(dir_okay=False, allow_dash=True))
@pass_cfg
def ft_index(cfg: CliConfig, field_name, source):
    """Index documents from a JSON-lines file of {"id": int, "text": str}."""
    from .fulltext import FullTextIndex

    docs = []
    for n, line in enumerate(_read_input(source).decode("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            docs.append((int(obj["id"]), str(obj["text"])))
        except (ValueError, KeyError, TypeError) as exc:
            raise UserError(f"{source}:{n}: expected {{\"id\": int, \"text\": str}} ({exc})") from None
    session = cfg.session()
    ft = FullTextIndex(session, field_name, bucket_size=cfg.bucket_size, compression=cfg.compression)
    count = ft.index_documents(docs)
    session.commit()
    emit({"field": field_name, "indexed": count})


@cli.command("ft-search")
@click.argument("field_name", metavar="FIELD")
@click.argument("terms", nargs=-1, required=True)
@click.option("-k", "--top", "k", default=10, show_default=True, type=click.IntRange(min=1))
@pass_cfg
def ft_search(cfg: CliConfig, field_name, terms, k):
    """Top-k documents for a query, most relevant first."""
    from .fulltext import FullTextIndex

    ft = FullTextIndex(cfg.session(), field_name, bucket_size=cfg.bucket_size, compression=cfg.compression)
    hits = ft.search(" ".join(terms), k)
    for rank, h in enumerate(hits, 1):
        emit({"rank": rank, "id": h.docid, "min_score": h.min_score, "max_score": h.max_score})
    info(f"read {ft.last_search.entries_read} posting entries")


@cli.command()
@click.argument("index")
@with_range
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False), help="Where to write the grant.")
@click.option("--revoke", is_flag=True, help="Re-key the range instead, invalidating earlier grants.")
@pass_cfg
def share(cfg: CliConfig, index, start, stop, prefix, out, revoke):
    """Write a grant that lets its holder read exactly one key range."""
    from . import sharing

    session = cfg.session()
    tree = cfg.tree(session, index)
    rng = _range(cfg, start, stop, prefix)
    if revoke:
        sharing.revoke(tree, rng)
        session.commit()
    grant = sharing.grant_range(tree, rng)
    grant.save(out)
    emit({"index": index, "grant": out, "path_keys": grant.key_count(),
          "contour_entries": len(grant.contour_pairs), "bytes": len(grant.to_bytes()), "revoked": revoke})


@cli.command("open-grant")
@click.argument("grant_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--key", "single", help="Look up one key instead of scanning.")
@with_range
@click.option("--limit", type=click.IntRange(min=1))
@pass_cfg
def open_grant(cfg: CliConfig, grant_file, single, start, stop, prefix, limit):
    """Read a shared range with only a grant file (no passphrase)."""
    from .sharing import RangeGrant, open_with_grant

    handle = open_with_grant(RangeGrant.load(grant_file), cfg.client())
    if single is not None:
        raw_key = cfg.encode_key(single)
        emit(_value_entry(cfg, raw_key, handle.search(raw_key)))
        return
    rng = None if start is None and stop is None and prefix is None else _range(cfg, start, stop, prefix)
    entries = handle.range_iterate(rng, limit) if limit else handle.range_fetch_all(rng)
    for k, v in entries:
        emit(_value_entry(cfg, k, v))


@cli.command()
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
              help="Scenario file of key=value lines.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override one scenario field.")
@click.option("--seed", type=int, help="Shorthand for --set seed=N.")
@pass_cfg
def bench(cfg: CliConfig, config_file, overrides, seed):
    """Measure query cost on a virtual-latency link and compare with the model (CSV)."""
    from .perfmodel import Scenario, results_csv, run_benchmark

    text = ""
    if config_file:
        with open(config_file, encoding="utf-8") as fh:
            text = fh.read()
    text += "".join(f"\n{o}" for o in overrides)
    if seed is not None:
        text += f"\nseed={seed}"
    scn = Scenario.parse(text)
    info(f"benchmarking {scn.name}: {scn.keys} keys, {scn.queries} queries")
    click.echo(results_csv([run_benchmark(scn)]), nl=False)


@cli.command("attack-sim")
@click.option("--zipf", "zipf_spec", metavar="S,N", help="Synthetic Zipf table with exponent S over N keywords.")
@click.option("--csv", "csv_file", type=click.Path(exists=True, dir_okay=False), help="Frequency table CSV.")
@click.option("--combine-zipf", metavar="S,N", help="Second field as a Zipf table; simulate the product.")
@click.option("--combine-csv", type=click.Path(exists=True, dir_okay=False), help="Second field as a CSV table.")
@click.option("--queries", required=True, metavar="Q[,Q...]", help="Observed query counts.")
@click.option("--trials", default=30, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=0, show_default=True, type=int)
def attack_sim(zipf_spec, csv_file, combine_zipf, combine_csv, queries, trials, seed):
    """Fraction of queries whose keyword an access-counting server can infer (CSV)."""
    from .attacksim import combined_field_table, fraction_inferable, report_csv

    table = _table(zipf_spec, csv_file, "--zipf", "--csv", required=True)
    other = _table(combine_zipf, combine_csv, "--combine-zipf", "--combine-csv", required=False)
    if other is not None:
        table = combined_field_table(table, other)
    try:
        qs = [int(float(q)) for q in queries.split(",") if q.strip()]
    except ValueError:
        raise UserError(f"--queries expects comma-separated integers, got {queries!r}") from None
    if not qs:
        raise UserError("--queries is empty")
    click.echo(report_csv([fraction_inferable(table, q, trials, seed) for q in qs]), nl=False)


def _table(zipf_spec, csv_file, zipf_flag, csv_flag, required):
    from .attacksim import FrequencyTable, load_frequency_csv

    if zipf_spec and csv_file:
        raise UserError(f"give only one of {zipf_flag} and {csv_flag}")
    if csv_file:
        return load_frequency_csv(csv_file)
    if zipf_spec:
        try:
            s, n = zipf_spec.split(",")
            return FrequencyTable.zipf(float(s), int(n))
        except ValueError:
            raise UserError(f"{zipf_flag} expects S,N such as 1.0,1000") from None
    if required:
        raise UserError(f"give {zipf_flag} or {csv_flag}")
    return None


@cli.command("optimal-bucket")
@click.option("--tau", required=True, type=float, help="Round-trip latency in seconds.")
@click.option("--bandwidth", required=True, type=float, help="Link bandwidth in bytes per second.")
@click.option("--c", "compression", default=1.0, show_default=True, type=float, help="Compression ratio.")
@click.option("--record", default=29, show_default=True, type=float, help="Branch record size s_r in bytes.")
def optimal_bucket(tau, bandwidth, compression, record):
    """Bucket size minimizing expected query latency on a link."""
    from .perfmodel import NetworkModel, optimal_bucket_size

    s_b = optimal_bucket_size(NetworkModel(tau, bandwidth, compression), record)
    emit({"bucket_size": round(s_b), "transmitted": round(s_b / compression), "tau": tau, "bandwidth": bandwidth,
          "c": compression, "record": record})


# -- entry point ------------------------------------------------------------

def main(argv: list[str] | None = None) -> int:
    """Run the CLI and exit with 0, 1 (user error) or 2 (internal error)."""
    try:
        cli.main(args=argv, prog_name="zerotree", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        info("aborted")
        return 1
    except click.UsageError as exc:
        if exc.ctx is not None:
            info(exc.ctx.get_usage())
        info(f"error: {exc.format_message()}")
        return 1
    except click.ClickException as exc:
        info(f"error: {exc.format_message()}")
        return 1
    except USER_ERRORS as exc:
        info(f"error: {_describe(exc)}")
        return 1
    except INTERNAL_ERRORS as exc:
        info(f"error: {type(exc).__name__}: {exc}")
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled", exc_info=True)
        info(f"internal error: {type(exc).__name__}: {exc}")
        return 2
    return 0


def _describe(exc: BaseException) -> str:
    if isinstance(exc, NotFound):
        return f"not found: {exc.args[0] if exc.args else ''}".rstrip(": ")
    return str(exc) or type(exc).__name__
