"""Stage-by-stage diarization pipeline over an output directory.

Every stage writes ``stage.json`` next to its artifacts with the run seed,
a digest of the config sections it depends on, and sha256 digests of its
outputs and of the upstream manifests it consumed. Downstream stages check
those records before reading anything, so artifacts from a different seed
or config are refused instead of silently mixed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import audio_io, bilstm, clustering, der, features, plda, vad, xvector
from .config import PipelineConfig
from .errors import ContractError, DataError, MissingArtifactError, StaleArtifactError
from .nnet import load_network, save_network
from .similarity import SimilarityMatrix, read_similarity, write_similarity

log = logging.getLogger(__name__)

STAGES = (
    "prepare",
    "train-extractor",
    "extract",
    "train-plda",
    "train-bilstm",
    "score",
    "sweep",
    "cluster",
    "evaluate",
)

STAGE_DIRS = {
    "prepare": "prepare",
    "train-extractor": "extractor",
    "extract": "embeddings",
    "train-plda": "plda",
    "train-bilstm": "bilstm",
    "score": "scores",
    "sweep": "sweep",
    "cluster": "clusters",
    "evaluate": "results",
}

# config sections each stage reads directly
STAGE_SECTIONS = {
    "prepare": ("corpus", "features", "vad", "segmentation"),
    "train-extractor": ("extractor",),
    "extract": (),
    "train-plda": ("plda",),
    "train-bilstm": ("bilstm",),
    "score": (),
    "sweep": ("clustering", "evaluation"),
    "cluster": ("clustering",),
    "evaluate": ("evaluation",),
}

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Pipeline:
    def __init__(self, config: PipelineConfig):
        config.validate()
        self.cfg = config
        self.out = config.out_dir
        self.seed = config.seed
        self.jobs = int(config.get("run", "jobs"))
        self._refs = None

    # -- bookkeeping -------------------------------------------------------

    def stage_dir(self, stage: str) -> Path:
        return self.out / STAGE_DIRS[stage]

    def _config_digest(self, stage: str) -> str:
        return self.cfg.digest(*STAGE_SECTIONS[stage]) if STAGE_SECTIONS[stage] else ""

    def _manifest_path(self, stage: str) -> Path:
        return self.stage_dir(stage) / "stage.json"

    def require(self, stage: str) -> dict:
        """Load and verify an upstream stage record."""
        path = self._manifest_path(stage)
        if not path.is_file():
            raise MissingArtifactError(path, stage)
        record = json.loads(path.read_text())
        if record.get("seed") != self.seed:
            raise StaleArtifactError(
                f"{stage} artifacts in {path.parent} were made with seed {record.get('seed')}, "
                f"current seed is {self.seed}; rerun the '{stage}' stage"
            )
        if record.get("config") != self._config_digest(stage):
            raise StaleArtifactError(f"configuration changed since '{stage}' ran; rerun the '{stage}' stage")
        for rel, digest in record["outputs"].items():
            p = self.out / rel
            if not p.is_file():
                raise MissingArtifactError(p, stage)
            if sha256_file(p) != digest:
                raise StaleArtifactError(f"{p} was modified after '{stage}' ran; rerun the '{stage}' stage")
        for up, digest in record.get("inputs", {}).items():
            up_path = self._manifest_path(up)
            if not up_path.is_file() or sha256_file(up_path) != digest:
                raise StaleArtifactError(f"'{up}' was rerun after '{stage}'; rerun the '{stage}' stage")
        return record

    def _finish(self, stage: str, outputs: list[Path], upstream=(), extra=None) -> None:
        record = {
            "stage": stage,
            "seed": self.seed,
            "config": self._config_digest(stage),
            "inputs": {u: sha256_file(self._manifest_path(u)) for u in upstream},
            "outputs": {str(Path(p).relative_to(self.out)): sha256_file(p) for p in sorted(outputs)},
        }
        if extra:
            record.update(extra)
        self._manifest_path(stage).write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")

    def _map(self, fn, items):
        if self.jobs > 1 and len(items) > 1:
            with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                return list(pool.map(fn, items))
        return [fn(i) for i in items]

    # -- shared readers ----------------------------------------------------

    def corpus(self) -> audio_io.CorpusManifest:
        return audio_io.read_manifest(self.stage_dir("prepare") / "corpus" / "manifest.tsv")

    def references(self) -> dict[str, audio_io.DiarizationAnnotation]:
        if self._refs is not None:
            return self._refs
        refs = {}
        for e in self.corpus():
            for ann in audio_io.parse_rttm(e.annotation_path):
                if ann.recording_id == e.recording_id:
                    refs[e.recording_id] = ann
            refs.setdefault(e.recording_id, audio_io.DiarizationAnnotation(e.recording_id, []))
        self._refs = refs
        return refs

    def split_ids(self, split: str) -> list[str]:
        return [e.recording_id for e in self.corpus().split(split)]

    def segments(self, rec: str) -> vad.SegmentTable:
        seg = self.cfg["segmentation"]
        rows = audio_io.parse_segments(self.stage_dir("prepare") / "segments" / f"{rec}.segments")
        return vad.SegmentTable(rows, seg["window"], seg["period"])

    def features(self, rec: str) -> np.ndarray:
        shift = self.cfg.get("features", "frame_shift")
        return features.read_features(self.stage_dir("prepare") / "feats" / f"{rec}.dkf", shift).values

    def vad_mask(self, rec: str) -> np.ndarray:
        return np.load(self.stage_dir("prepare") / "vad" / f"{rec}.npy")

    def embeddings(self, rec: str) -> xvector.EmbeddingSequence:
        return xvector.read_embeddings(self.stage_dir("extract") / f"{rec}.dkxv", rec)

    def segment_labels(self, rec: str, emb: xvector.EmbeddingSequence) -> list:
        segs = {s.utterance_id: s for s in self.segments(rec)}
        return vad.label_segments([segs[u] for u in emb.ids], self.references()[rec])

    def combos(self) -> list[tuple[str, str]]:
        c = self.cfg["clustering"]
        return [(s, k) for s in c["scorers"] for k in c["clusterers"]]

    def frame_spec(self) -> features.FrameSpec:
        f = self.cfg["features"]
        return features.FrameSpec(
            frame_length=f["frame_length"],
            frame_shift=f["frame_shift"],
            num_mel_filters=f["num_mel_filters"],
            num_ceps=f["num_ceps"],
        )

    def xvec_config(self, num_speakers: int) -> xvector.XvecConfig:
        e = self.cfg["extractor"]
        return xvector.XvecConfig(
            num_speakers=num_speakers,
            embedding_dim=e["embedding_dim"],
            feat_dim=self.cfg.get("features", "num_ceps"),
            shrink=e["shrink"],
            min_frames_per_chunk=e["min_frames"],
            max_frames_per_chunk=e["max_frames"],
            epochs=e["epochs"],
            lr=e["lr"],
            minibatch_size=e["minibatch_size"],
            chunks_per_epoch=e["chunks_per_epoch"],
            seed=self.seed,
        )

    def bilstm_config(self, embedding_dim: int) -> bilstm.BilstmConfig:
        b = self.cfg["bilstm"]
        return bilstm.BilstmConfig(
            embedding_dim=embedding_dim,
            hidden=b["hidden"],
            layers=b["layers"],
            dense=b["dense"],
            epochs=b["epochs"],
            lr=b["lr"],
            max_seq_len=b["max_seq_len"],
            folds=b["folds"],
            rows_per_batch=b["rows_per_batch"],
            seed=self.seed,
        )

    # -- stages ------------------------------------------------------------

    def prepare(self) -> None:
        """Materialize the corpus, then features, VAD and uniform segments per recording."""
        d = self.stage_dir("prepare")
        for sub in ("corpus", "feats", "vad", "segments"):
            (d / sub).mkdir(parents=True, exist_ok=True)
        c = self.cfg["corpus"]
        if c["manifest"]:
            src = audio_io.read_manifest(c["manifest"])
            entries = [audio_io.ManifestEntry(e.recording_id, Path(e.audio_path).resolve(), Path(e.annotation_path).resolve(), e.split) for e in src]
            manifest = audio_io.CorpusManifest(entries)
            audio_io.write_manifest(manifest, d / "corpus" / "manifest.tsv")
            outputs = [d / "corpus" / "manifest.tsv"]
        else:
            log.info("generating synthetic corpus (%d recordings)", c["num_recordings"])
            signals, anns = audio_io.generate_synthetic_corpus(
                c["num_speakers"], c["num_recordings"], c["duration"], (c["turn_min"], c["turn_max"]), seed=self.seed
            )
            n_tr, n_dev = c["train_recordings"], c["dev_recordings"]
            splits = ["train"] * n_tr + ["dev"] * n_dev + ["eval"] * (len(signals) - n_tr - n_dev)
            manifest = audio_io.write_corpus(d / "corpus", signals, anns, splits)
            outputs = [d / "corpus" / "manifest.tsv"]
            outputs += [e.audio_path for e in manifest] + [e.annotation_path for e in manifest]
        spec = self.frame_spec()
        v, s = self.cfg["vad"], self.cfg["segmentation"]
        tasks = [(e.recording_id, str(e.audio_path), str(d), spec, v, s) for e in manifest]
        for produced in self._map(_prepare_recording, tasks):
            outputs += [Path(p) for p in produced]
        self._refs = None
        self._finish("prepare", outputs)

    def train_extractor(self) -> None:
        self.require("prepare")
        refs = self.references()
        utts = []
        shift = self.cfg.get("features", "frame_shift")
        for rec in self.split_ids("train"):
            feats, mask = self.features(rec), self.vad_mask(rec)
            for t in vad.chunk_speakers(refs[rec]).turns:
                sl = vad.segment_frames(audio_io.Segment("", rec, t.onset, t.end), shift, len(feats))
                utts.append(xvector.Utterance(feats[sl][mask[sl]], vad.base_speaker(t.speaker)))
        speakers = sorted({u.speaker for u in utts})
        if len(speakers) < 2:
            raise DataError(f"train split has {len(speakers)} speaker(s); x-vector training needs >= 2")
        cfg = self.xvec_config(len(speakers))
        net, history = xvector.train_extractor(utts, cfg)
        d = self.stage_dir("train-extractor")
        d.mkdir(parents=True, exist_ok=True)
        save_network(net, d / "final.dknn")
        (d / "speakers.txt").write_text("\n".join(speakers) + "\n")
        (d / "train_log.tsv").write_text(
            "epoch\tmean_loss\taccuracy\n" + "".join(f"{h.epoch}\t{h.loss:.6f}\t{h.accuracy:.4f}\n" for h in history)
        )
        self._finish("train-extractor", [d / "final.dknn", d / "speakers.txt", d / "train_log.tsv"], ["prepare"])

    def extract(self) -> None:
        self.require("prepare")
        self.require("train-extractor")
        net = load_network(self.stage_dir("train-extractor") / "final.dknn")
        d = self.stage_dir("extract")
        d.mkdir(parents=True, exist_ok=True)
        shift = self.cfg.get("features", "frame_shift")
        outputs = []
        for e in self.corpus():
            rec = e.recording_id
            emb = xvector.extract_embeddings(net, self.segments(rec), self.features(rec), shift, rec)
            xvector.write_embeddings(d / f"{rec}.dkxv", emb)
            outputs.append(d / f"{rec}.dkxv")
        self._finish("extract", outputs, ["prepare", "train-extractor"])

    def _labelled(self, recs):
        X, y = [], []
        for rec in recs:
            emb = self.embeddings(rec)
            for vec, lab in zip(emb.vectors, self.segment_labels(rec, emb)):
                if lab is not None:
                    X.append(vec)
                    y.append(lab)
        return np.array(X), y

    def train_plda(self) -> None:
        self.require("prepare")
        self.require("extract")
        X, y = self._labelled(self.split_ids("train"))
        if self.cfg.get("plda", "length_norm"):
            X = xvector.length_normalize(X)
        lda_dim = int(self.cfg.get("plda", "lda_dim"))
        lda = None
        if lda_dim:
            n_cls = len(set(y))
            if lda_dim > n_cls - 1:
                raise ContractError(f"[plda] lda_dim {lda_dim} exceeds classes-1 = {n_cls - 1}")
            lda = plda.fit_lda(X, y, lda_dim)
            X = lda.transform(X)
        model = plda.fit_plda(X, y)
        d = self.stage_dir("train-plda")
        d.mkdir(parents=True, exist_ok=True)
        plda.save_plda(d / "plda.dkpl", model, lda)
        self._finish("train-plda", [d / "plda.dkpl"], ["prepare", "extract"])

    def train_bilstm(self) -> None:
        self.require("prepare")
        self.require("extract")
        recs = [e.recording_id for e in self.corpus()]
        data = {}
        for rec in recs:
            emb = self.embeddings(rec)
            data[rec] = bilstm.ScorerData(rec, emb.vectors, self.segment_labels(rec, emb))
        dim = next(iter(data.values())).embeddings.shape[1]
        cfg = self.bilstm_config(dim)
        folds = bilstm.kfold_split(recs, cfg.folds, self.seed)
        d = self.stage_dir("train-bilstm")
        d.mkdir(parents=True, exist_ok=True)
        tasks = [(k, [data[r] for r in train], cfg, str(d)) for k, (train, _) in enumerate(folds)]
        outputs = []
        for produced in self._map(_train_fold, tasks):
            outputs += [Path(p) for p in produced]
        lines = [f"{rec}\t{k}\n" for k, (_, test) in enumerate(folds) for rec in sorted(test)]
        (d / "folds.tsv").write_text("".join(lines))
        outputs.append(d / "folds.tsv")
        self._finish("train-bilstm", outputs, ["prepare", "extract"])

    def score(self) -> None:
        self.require("extract")
        recs = [e.recording_id for e in self.corpus()]
        d = self.stage_dir("score")
        outputs, upstream = [], ["extract"]
        scorers = self.cfg.get("clustering", "scorers")
        if "plda" in scorers:
            self.require("train-plda")
            upstream.append("train-plda")
            model, lda = plda.load_plda(self.stage_dir("train-plda") / "plda.dkpl")
            for sub in ("plda", "plda_raw"):
                (d / sub).mkdir(parents=True, exist_ok=True)
            for rec in recs:
                emb = self.embeddings(rec)
                X = xvector.length_normalize(emb.vectors) if self.cfg.get("plda", "length_norm") else emb.vectors
                X = lda.transform(X) if lda is not None else X
                raw = plda.score_matrix(model, X, emb.ids, logistic=False)
                sim = SimilarityMatrix(plda.normalize_score(raw.values), emb.ids)
                np.fill_diagonal(sim.values, 1.0)
                write_similarity(d / "plda_raw" / f"{rec}.dksm", raw)
                write_similarity(d / "plda" / f"{rec}.dksm", sim)
                outputs += [d / "plda_raw" / f"{rec}.dksm", d / "plda" / f"{rec}.dksm"]
        if "bilstm" in scorers:
            self.require("train-bilstm")
            upstream.append("train-bilstm")
            (d / "bilstm").mkdir(parents=True, exist_ok=True)
            bd = self.stage_dir("train-bilstm")
            fold_of = dict(line.split("\t") for line in (bd / "folds.tsv").read_text().splitlines())
            nets = {}
            for rec in recs:
                k = int(fold_of[rec])
                if k not in nets:
                    nets[k] = load_network(bd / f"fold{k}.dknn")
                emb = self.embeddings(rec)
                cfg = self.bilstm_config(emb.dim)
                sim = bilstm.predict_similarity(nets[k], emb.vectors, cfg, emb.ids)
                write_similarity(d / "bilstm" / f"{rec}.dksm", sim)
                outputs.append(d / "bilstm" / f"{rec}.dksm")
        self._finish("score", outputs, upstream)

    def similarity(self, scorer: str, clusterer: str, rec: str) -> SimilarityMatrix:
        sub = "plda_raw" if (scorer, clusterer) == ("plda", "ahc") else scorer
        path = self.stage_dir("score") / sub / f"{rec}.dksm"
        if not path.is_file():
            raise MissingArtifactError(path, "score")
        return read_similarity(path)

    def sweep_range(self, scorer: str, clusterer: str) -> tuple[float, float, float]:
        c = self.cfg["clustering"]
        if clusterer == "sc":
            return tuple(c["sc_sweep"])
        return tuple(c["plda_ahc_sweep"] if scorer == "plda" else c["bilstm_ahc_sweep"])

    def cluster_kwargs(self, clusterer: str) -> dict:
        c = self.cfg["clustering"]
        if clusterer == "ahc":
            return {"linkage": c["linkage"]}
        return {"kmeans_restarts": c["kmeans_restarts"], "seed": self.seed}

    def _items(self, scorer, clusterer, recs):
        refs = self.references()
        return [(self.similarity(scorer, clusterer, r), self._segments_for(r), refs[r]) for r in recs]

    def _segments_for(self, rec):
        emb = self.embeddings(rec)
        segs = {s.utterance_id: s for s in self.segments(rec)}
        return [segs[u] for u in emb.ids]

    def tuning_ids(self) -> list[str]:
        dev = self.split_ids("dev")
        if not dev:
            log.warning("no dev recordings; tuning thresholds on the eval split")
            return self.split_ids("eval")
        return dev

    def sweep(self) -> None:
        self.require("prepare")
        self.require("score")
        d = self.stage_dir("sweep")
        d.mkdir(parents=True, exist_ok=True)
        collar = self.cfg.get("evaluation", "collar")
        recs = self.tuning_ids()
        outputs, best = [], []
        for scorer, clusterer in self.combos():
            lo, hi, step = self.sweep_range(scorer, clusterer)
            result = clustering.sweep_thresholds(
                self._items(scorer, clusterer, recs), clusterer, lo, hi, step, collar, **self.cluster_kwargs(clusterer)
            )
            path = d / f"{scorer}_{clusterer}.csv"
            write_sweep_csv(path, result.table)
            outputs.append(path)
            best.append(f"{scorer}\t{clusterer}\t{result.best_threshold:.4f}\t{result.best_der:.2f}\n")
            log.info("sweep %s+%s: best threshold %.3f (DER %.2f%%)", scorer, clusterer, result.best_threshold, result.best_der)
        (d / "best.tsv").write_text("scorer\tclusterer\tthreshold\tder_percent\n" + "".join(best))
        outputs.append(d / "best.tsv")
        self._finish("sweep", outputs, ["prepare", "score"], {"tuned_on": recs})

    def best_thresholds(self) -> dict[tuple[str, str], float]:
        lines = (self.stage_dir("sweep") / "best.tsv").read_text().splitlines()[1:]
        return {(s, c): float(t) for s, c, t, _ in (line.split("\t") for line in lines)}

    def cluster(self) -> None:
        self.require("prepare")
        self.require("score")
        self.require("sweep")
        thresholds = self.best_thresholds()
        d = self.stage_dir("cluster")
        recs = self.split_ids("dev") + self.split_ids("eval")
        outputs = []
        for scorer, clusterer in self.combos():
            if (scorer, clusterer) not in thresholds:
                raise StaleArtifactError(f"no tuned threshold for {scorer}+{clusterer}; rerun the 'sweep' stage")
            thr = thresholds[(scorer, clusterer)]
            sub = d / f"{scorer}_{clusterer}"
            sub.mkdir(parents=True, exist_ok=True)
            hyps = []
            for rec in recs:
                sim = self.similarity(scorer, clusterer, rec)
                assign = clustering.cluster(sim, clusterer, thr, **self.cluster_kwargs(clusterer))
                write_cluster_labels(sub / f"{rec}.txt", sim.ids, assign.labels)
                outputs.append(sub / f"{rec}.txt")
                hyps.append(vad.segments_to_annotation(self._segments_for(rec), [f"c{l}" for l in assign.labels], rec))
            audio_io.write_rttm(hyps, sub / "hyp.rttm")
            outputs.append(sub / "hyp.rttm")
        self._finish("cluster", outputs, ["prepare", "score", "sweep"])

    def evaluate(self) -> list[dict]:
        self.require("prepare")
        self.require("sweep")
        self.require("cluster")
        refs = self.references()
        eval_ids = self.split_ids("eval")
        collar = self.cfg.get("evaluation", "collar")
        thresholds = self.best_thresholds()
        d = self.stage_dir("evaluate")
        d.mkdir(parents=True, exist_ok=True)
        outputs, rows, per_combo = [], [], {}
        for scorer, clusterer in self.combos():
            hyp_path = self.stage_dir("cluster") / f"{scorer}_{clusterer}" / "hyp.rttm"
            hyps = {a.recording_id: a for a in audio_io.parse_rttm(hyp_path)}
            reports, total = der.evaluate({r: refs[r] for r in eval_ids}, hyps, collar)
            name = f"der_{scorer}_{clusterer}"
            der.write_der_csv(d / f"{name}.csv", reports, total)
            (d / f"{name}.txt").write_text(der.format_der_report(reports, total))
            outputs += [d / f"{name}.csv", d / f"{name}.txt"]
            per_combo[(scorer, clusterer)] = reports
            rows.append(
                {"scorer": scorer, "clusterer": clusterer, "threshold": thresholds[(scorer, clusterer)], "der": total.der_percent, "report": total}
            )
        summary = "scorer,clusterer,threshold,err_spk,err_fas,err_miss,T,der_percent\n" + "".join(
            f"{r['scorer']},{r['clusterer']},{r['threshold']:.4f},{r['report'].err_spk:.3f},{r['report'].err_fas:.3f},"
            f"{r['report'].err_miss:.3f},{r['report'].scored_time:.3f},{r['der']:.2f}\n"
            for r in rows
        )
        (d / "summary.csv").write_text(summary)
        (d / "results.md").write_text(results_markdown(rows, eval_ids, self.cfg))
        outputs += [d / "summary.csv", d / "results.md"]
        try:
            from . import plotting

            plotting.render_all(self, rows, per_combo, eval_ids)
        except Exception as e:  # figures are a convenience; never fail the run over them
            log.warning("figure rendering failed: %s", e)
        self._finish("evaluate", outputs, ["prepare", "sweep", "cluster"])
        return rows

    def run(self, stage: str):
        fn = {
            "prepare": self.prepare,
            "train-extractor": self.train_extractor,
            "extract": self.extract,
            "train-plda": self.train_plda,
            "train-bilstm": self.train_bilstm,
            "score": self.score,
            "sweep": self.sweep,
            "cluster": self.cluster,
            "evaluate": self.evaluate,
        }[stage]
        t0 = time.perf_counter()
        log.info("stage %s: start", stage)
        result = fn()
        log.info("stage %s: done in %.1f s", stage, time.perf_counter() - t0)
        return result

    def run_all(self):
        scorers = self.cfg.get("clustering", "scorers")
        result = None
        for stage in STAGES:
            if stage == "train-plda" and "plda" not in scorers:
                continue
            if stage == "train-bilstm" and "bilstm" not in scorers:
                continue
            result = self.run(stage)
        return result


# -- worker functions (top level so process pools can pickle them) ---------


def _prepare_recording(task) -> list[str]:
    rec, wav_path, out_dir, spec, v, s = task
    out = Path(out_dir)
    sig = audio_io.read_wav(wav_path, rec)
    mfcc = features.compute_mfcc(sig, spec)
    mask = vad.energy_vad(mfcc, v["threshold_offset"], v["mean_scale"], v["context"], v["proportion"])
    feats = features.cmvn(mfcc)
    regions = vad.speech_regions(mask, spec.frame_shift)
    segs = vad.uniform_segments(regions, s["window"], s["period"], s["min_tail"], rec)
    paths = [out / "feats" / f"{rec}.dkf", out / "vad" / f"{rec}.npy", out / "segments" / f"{rec}.segments"]
    features.write_features(paths[0], feats)
    np.save(paths[1], mask)
    audio_io.write_segments(segs.segments, paths[2])
    return [str(p) for p in paths]


def _train_fold(task) -> list[str]:
    k, train, cfg, out_dir = task
    net, history = bilstm.train_bilstm(train, cfg)
    out = Path(out_dir)
    save_network(net, out / f"fold{k}.dknn")
    (out / f"train_log_fold{k}.tsv").write_text("epoch\tmean_loss\n" + "".join(f"{i + 1}\t{h:.6f}\n" for i, h in enumerate(history)))
    return [str(out / f"fold{k}.dknn"), str(out / f"train_log_fold{k}.tsv")]


# -- writers ---------------------------------------------------------------


def write_sweep_csv(path, table) -> None:
    Path(path).write_text("threshold,DER\n" + "".join(f"{t:.4f},{d:.4f}\n" for t, d in table))


def write_cluster_labels(path, ids, labels) -> None:
    Path(path).write_text("".join(f"{u}\t{int(l)}\n" for u, l in zip(ids, labels)))


def read_cluster_labels(path) -> dict[str, int]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            u, l = line.split("\t")
            out[u] = int(l)
    return out


LABELS = {"plda": "PLDA", "bilstm": "Bi-LSTM", "ahc": "AHC", "sc": "SC"}


def ordering_checks(rows) -> list[tuple[str, bool]]:
    """Directional comparisons of Bi-LSTM+AHC against the other systems present."""
    der_of = {(r["scorer"], r["clusterer"]): r["der"] for r in rows}
    ref = der_of.get(("bilstm", "ahc"))
    if ref is None:
        return []
    return [
        (f"Bi-LSTM+AHC <= {LABELS[s]}+{LABELS[c]}", ref <= der_of[(s, c)])
        for s, c in (("bilstm", "sc"), ("plda", "ahc"), ("plda", "sc"))
        if (s, c) in der_of
    ]


def results_markdown(rows, eval_ids, cfg: PipelineConfig) -> str:
    seg = cfg["segmentation"]
    ext = cfg["extractor"]
    lines = [
        "# Diarization results",
        "",
        f"Evaluated on {len(eval_ids)} recording(s): {', '.join(eval_ids)}.",
        f"Segmentation {seg['window']} s window / {seg['period']} s period, x-vector dim {ext['embedding_dim']}"
        f" (shrink {ext['shrink']}), collar {cfg.get('evaluation', 'collar')} s, seed {cfg.seed}.",
        "",
        "| Scoring | Clustering | Threshold | Spk err (s) | FA (s) | Miss (s) | Scored (s) | DER (%) |",
        "|---|---|---:|---:|---:|---:|---:|---:|",
    ]
    for r in rows:
        rep = r["report"]
        lines.append(
            f"| {LABELS[r['scorer']]} | {LABELS[r['clusterer']]} | {r['threshold']:.2f} | {rep.err_spk:.2f} | "
            f"{rep.err_fas:.2f} | {rep.err_miss:.2f} | {rep.scored_time:.2f} | {r['der']:.2f} |"
        )
    checks = ordering_checks(rows)
    if checks:
        lines += ["", "Ordering:", ""]
        lines += [f"- {name}: {'yes' if ok else 'no'}" for name, ok in checks]
    return "\n".join(lines) + "\n"
