use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use contextvae::checkpoint::load_checkpoint;
use contextvae::data::load_scenes;
use contextvae::model::ContextVae;
use contextvae::config::RunConfig;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(epochs: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().display();
        let toml = format!(
            "out_dir = '{d}/out'\nseed = 4\n\
             [data]\ntrain = '{d}/train.ndjson'\ntest = '{d}/test.ndjson'\n\
             [model]\nhidden = 8\nlatent = 4\nembed = 6\n\
             [model.map_encoder]\nchannels = [4, 4]\nfeatures = 8\n\
             [train]\nepochs = {epochs}\nbatch_size = 8\n\
             [eval]\nk = [1, 5]\n"
        );
        std::fs::write(dir.path().join("run.toml"), toml).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_contextvae"))
            .arg("--config")
            .arg(self.path("run.toml"))
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }

    fn with_data(epochs: usize) -> Self {
        let ws = Workspace::new(epochs);
        ws.ok(&["generate", "--out", ws.path("train.ndjson").to_str().unwrap(), "--scenes", "6"]);
        ws.ok(&[
            "generate",
            "--out",
            ws.path("test.ndjson").to_str().unwrap(),
            "--scenes",
            "2",
            "--set",
            "generate.synthetic.seed=77",
        ]);
        ws
    }

    fn config(&self) -> RunConfig {
        RunConfig::load(Some(&self.path("run.toml")), &[]).unwrap()
    }
}

fn first_target(path: &Path) -> (String, u64) {
    let scenes = load_scenes(path).unwrap();
    (scenes[0].scene_id.clone(), scenes[0].objects_of_interest[0])
}

fn decode_png(path: &Path) -> (u32, u32, Vec<u8>, Vec<String>) {
    let dec = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(path).unwrap()));
    let mut reader = dec.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    buf.truncate(info.buffer_size());
    let keys = reader.info().uncompressed_latin1_text.iter().map(|t| t.keyword.clone()).collect();
    (info.width, info.height, buf, keys)
}

#[test]
fn generate_is_deterministic_and_round_trips() {
    let ws = Workspace::new(1);
    let (a, b, empty) = (ws.path("a.ndjson"), ws.path("b.ndjson"), ws.path("e.ndjson"));
    ws.ok(&["generate", "--out", a.to_str().unwrap(), "--scenes", "100"]);
    ws.ok(&["generate", "--out", b.to_str().unwrap(), "--scenes", "100"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(load_scenes(&a).unwrap().len(), 100);
    ws.ok(&["generate", "--out", empty.to_str().unwrap(), "--scenes", "0"]);
    assert!(std::fs::read(&empty).unwrap().is_empty());
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path("a.ndjson.config.json")).unwrap()).unwrap();
    assert_eq!(sidecar["config"]["generate"]["scenes"], 100);
    assert_eq!(sidecar["truth"].as_array().unwrap().len(), 100);
}

#[test]
fn zero_epochs_checkpoint_is_the_initialization() {
    let ws = Workspace::with_data(0);
    ws.ok(&["train"]);
    let (trainer, echo) = load_checkpoint(&ws.path("out/checkpoint.ckpt")).unwrap();
    let fresh = ContextVae::new(ws.config().model).unwrap();
    assert_eq!(trainer.step, 0);
    for (a, b) in trainer.model.store.tensors().iter().zip(fresh.store.tensors()) {
        assert_eq!(a.data, b.data, "{}", a.name);
    }
    assert_eq!(echo, ws.config().to_json());
}

#[test]
fn training_is_reproducible_and_resumable() {
    let ws = Workspace::with_data(1);
    let log = |ws: &Workspace| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(ws.path("out/train_log.json")).unwrap()).unwrap()
    };
    ws.ok(&["train"]);
    let first = log(&ws);
    let bytes = std::fs::read(ws.path("out/checkpoint.ckpt")).unwrap();
    ws.ok(&["train"]);
    assert_eq!(log(&ws)["records"], first["records"]);
    assert_eq!(std::fs::read(ws.path("out/checkpoint.ckpt")).unwrap(), bytes);
    assert!(first["config"].is_object());

    let steps = first["records"].as_array().unwrap().len() as u64;
    let saved = ws.path("epoch1.ckpt");
    std::fs::copy(ws.path("out/checkpoint.ckpt"), &saved).unwrap();
    ws.ok(&["train", "--resume", saved.to_str().unwrap()]);
    let (trainer, _) = load_checkpoint(&ws.path("out/checkpoint.ckpt")).unwrap();
    assert_eq!(trainer.step, 2 * steps);
    assert_eq!(trainer.epoch, 2);
    let resumed = log(&ws);
    let last = first["records"][steps as usize - 1]["step"].as_u64().unwrap();
    assert_eq!(resumed["records"][0]["step"], last + 1);
}

#[test]
fn eval_writes_model_and_baseline_reports() {
    let ws = Workspace::with_data(1);
    ws.ok(&["train"]);
    ws.ok(&["eval", "--checkpoint", ws.path("out/checkpoint.ckpt").to_str().unwrap(), "--baselines"]);
    for tag in ["integrated+m-attn", "constant-velocity", "kalman"] {
        let doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(ws.path(&format!("out/eval_{tag}.json"))).unwrap()).unwrap();
        let report = &doc["report"];
        assert_eq!(report["model"], tag);
        assert_eq!(report["horizon"], 15);
        let n = report["samples"].as_u64().unwrap();
        assert_eq!(report["per_sample"].as_array().unwrap().len() as u64, n);
        let agg = report["aggregate"].as_array().unwrap();
        assert_eq!(agg.iter().map(|m| m["k"].as_u64().unwrap()).collect::<Vec<_>>(), vec![1, 5]);
        assert!(agg[1]["min_ade"].as_f64().unwrap() <= agg[0]["min_ade"].as_f64().unwrap());
        assert!(doc["config"].is_object());
        let text = std::fs::read_to_string(ws.path(&format!("out/eval_{tag}.txt"))).unwrap();
        assert!(text.contains("minADE_5\t") && text.lines().last().unwrap().starts_with("config\t"));
    }
}

#[test]
fn predict_is_bit_reproducible_and_renders_figures() {
    let ws = Workspace::with_data(1);
    ws.ok(&["train"]);
    let ckpt = ws.path("out/checkpoint.ckpt");
    let (scene, target) = first_target(&ws.path("test.ndjson"));
    let target = target.to_string();
    let predict = |out: &str, extra: &[&str]| {
        let mut args = vec![
            "predict",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--scene",
            &scene,
            "--target",
            &target,
            "--seed",
            "9",
        ];
        let out = ws.path(out);
        let out = out.to_str().unwrap().to_string();
        args.extend(["--out", &out]);
        args.extend(extra);
        ws.ok(&args);
        std::fs::read(ws.path(&out)).unwrap()
    };
    let fig = ws.path("fig.png");
    let figure_args = ["--figure", fig.to_str().unwrap(), "--attention", "--saliency", "--scale", "2"];
    let a = predict("a.json", &figure_args);
    let png = std::fs::read(&fig).unwrap();
    assert_eq!(predict("a.json", &figure_args), a);
    assert_eq!(std::fs::read(&fig).unwrap(), png);
    let doc: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(doc["prediction"]["trajectories"].as_array().unwrap().len(), 5);
    assert_eq!(doc["truth"].as_array().unwrap().len(), 15);
    let one: serde_json::Value = serde_json::from_slice(&predict("c.json", &["-k", "1"])).unwrap();
    assert_eq!(one["prediction"]["trajectories"].as_array().unwrap().len(), 1);
    let (w, h, _, keys) = decode_png(&fig);
    assert_eq!((w, h), (448, 448));
    assert_eq!(keys, vec!["config".to_string()]);
}

#[test]
fn rasterize_preview_of_an_empty_map_is_black_with_the_anchor() {
    let ws = Workspace::new(1);
    let scene = r#"{"scene_id":"blank","fps":5.0,"objects_of_interest":[1],"map":{},"frames":[{"t":0.0,"agents":[{"id":1,"type":"car","position":[10,20],"heading":1.0}]}]}"#;
    let file = ws.path("blank.ndjson");
    std::fs::write(&file, format!("{scene}\n")).unwrap();
    let png = ws.path("blank.png");
    let args = ["rasterize-preview", "--scenes", file.to_str().unwrap(), "--scene", "blank", "--target", "1", "--out"];
    ws.ok(&[&args[..], &[png.to_str().unwrap()]].concat());
    let (w, h, data, _) = decode_png(&png);
    assert_eq!((w, h), (224, 224));
    assert!(data.iter().all(|v| *v == 0));
    ws.ok(&[&args[..], &[png.to_str().unwrap(), "--mark-anchor"]].concat());
    let (_, _, data, _) = decode_png(&png);
    let lit: Vec<usize> = (0..224 * 224).filter(|i| data[3 * i] != 0).collect();
    assert_eq!(lit, vec![121 * 224 + 50]);
}

#[test]
fn failures_map_to_documented_exit_codes() {
    let ws = Workspace::with_data(1);
    let code = |args: &[&str]| ws.run(args).status.code();
    assert_eq!(code(&["train", "--set", "bogus=1"]), Some(2));
    assert_eq!(code(&["train", "--set", "data.window.t_min=1"]), Some(2));
    assert_eq!(code(&["train", "--set", "data.train='/nonexistent.ndjson'"]), Some(2));
    let bad = ws.path("bad.ndjson");
    std::fs::write(&bad, "{not json}\n").unwrap();
    assert_eq!(code(&["train", "--set", &format!("data.train='{}'", bad.display())]), Some(3));
    assert_eq!(code(&["eval", "--checkpoint", "/nonexistent.ckpt"]), Some(3));
    let missing = ["rasterize-preview", "--scene", "nope", "--target", "1", "--out", "/tmp/x.png"];
    assert_eq!(code(&missing), Some(3));
}
