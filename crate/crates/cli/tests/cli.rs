use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use popa_core::ingest::{parse_csv_str, write_csv, SensorFrame, SessionRecording};
use popa_core::synth::{baseline_distance, generate_population, PopulationParams};
use popa_core::{FRAME_PERIOD_MS, SENSOR_COUNT};
use tempfile::TempDir;

fn popa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_popa"))
        .args(args)
        .env_remove("POPA_CONFIG")
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("run popa")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(o: Output) -> Output {
    assert_eq!(o.status.code(), Some(0), "stdout: {}\nstderr: {}", stdout(&o), stderr(&o));
    o
}

fn read_rec(path: &Path) -> SessionRecording {
    parse_csv_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_rec(path: &Path, subject: &str, frames: Vec<SensorFrame>) {
    let frames = frames.into_iter().enumerate().map(|(i, f)| f.retimed(i as u64 * FRAME_PERIOD_MS)).collect();
    fs::write(path, write_csv(&SessionRecording::new(subject, "stream", frames).unwrap())).unwrap();
}

fn sorted_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

/// Four synthetic subjects with two 400 s sessions each, all enrolled.
struct Cohort {
    _tmp: TempDir,
    root: PathBuf,
}

impl Cohort {
    fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        let root = tmp.path().to_path_buf();
        let data = root.join("data");
        ok(popa(&["synth", "--subjects", "4", "--sessions", "2", "--duration-s", "400", "--out", p(&data)]));
        for s in 1..=4 {
            let rec = data.join(format!("s{s:02}_session1.csv"));
            ok(popa(&["enroll", "--in", p(&rec), "--profiles", p(&root.join("profiles"))]));
        }
        Cohort { _tmp: tmp, root }
    }

    fn session(&self, subject: usize, session: usize) -> SessionRecording {
        read_rec(&self.root.join(format!("data/s{subject:02}_session{session}.csv")))
    }

    fn monitor(&self, subject: usize, stream: &Path) -> Output {
        let profile = self.root.join(format!("profiles/s{subject:02}.popa-profile"));
        popa(&[
            "monitor",
            "--in",
            p(stream),
            "--profile",
            p(&profile),
            "--background",
            p(&self.root.join("profiles")),
        ])
    }

    /// The cohort member whose baseline lies farthest from subject 1's.
    fn farthest_from_first(&self) -> usize {
        let specs = generate_population(&PopulationParams { n_subjects: 4, ..Default::default() }).unwrap();
        (2..=4)
            .max_by(|&a, &b| {
                baseline_distance(&specs[0], &specs[a - 1]).total_cmp(&baseline_distance(&specs[0], &specs[b - 1]))
            })
            .unwrap()
    }
}

#[test]
fn synth_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = ok(popa(&["synth", "--subjects", "3", "--sessions", "2", "--duration-s", "30", "--drift", "5", "--out", p(dir)]));
        assert!(stdout(&o).contains("wrote 3 specs and 6 recordings"));
    }
    let (fa, fb) = (sorted_files(&a), sorted_files(&b));
    assert_eq!(fa.len(), 9);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
    let rec = read_rec(&a.join("s01_session1.csv"));
    assert_eq!((rec.subject_id(), rec.len()), ("s01", 60));

    // A different seed changes the data.
    let c = tmp.path().join("c");
    ok(popa(&["--seed", "2", "synth", "--subjects", "3", "--duration-s", "30", "--out", p(&c)]));
    assert_ne!(fs::read(a.join("s01_session1.csv")).unwrap(), fs::read(c.join("s01_session1.csv")).unwrap());
}

#[test]
fn synth_cohort_of_seventeen() {
    let tmp = TempDir::new().unwrap();
    ok(popa(&["synth", "--subjects", "17", "--sessions", "2", "--duration-s", "5", "--out", p(tmp.path())]));
    let csvs = sorted_files(tmp.path()).into_iter().filter(|f| f.extension().unwrap() == "csv").count();
    assert_eq!(csvs, 34);
}

#[test]
fn enroll_refuses_short_recordings_and_overwrites() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let profiles = tmp.path().join("profiles");
    ok(popa(&["synth", "--subjects", "1", "--duration-s", "60", "--out", p(&data)]));
    let short = popa(&["enroll", "--in", p(&data.join("s01_session1.csv")), "--profiles", p(&profiles)]);
    assert_eq!(short.status.code(), Some(1));
    assert!(stderr(&short).contains("120 frames; enrollment needs 600"), "{}", stderr(&short));

    let long = tmp.path().join("long");
    ok(popa(&["synth", "--subjects", "1", "--duration-s", "310", "--out", p(&long)]));
    let rec = long.join("s01_session1.csv");
    let first = ok(popa(&["enroll", "--in", p(&rec), "--profiles", p(&profiles)]));
    let path = PathBuf::from(stdout(&first).trim());
    assert!(path.ends_with("s01.popa-profile"));
    assert!(fs::read_to_string(&path).unwrap().starts_with("#popa-profile v1"));

    let again = popa(&["enroll", "--in", p(&rec), "--profiles", p(&profiles)]);
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("--force"));
    ok(popa(&["enroll", "--in", p(&rec), "--profiles", p(&profiles), "--force"]));
}

#[test]
fn monitor_exit_codes() {
    let c = Cohort::new();
    let genuine = c.session(1, 2).into_frames();

    let path = c.root.join("genuine.csv");
    write_rec(&path, "s01", genuine[..200].to_vec());
    let o = ok(c.monitor(1, &path));
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 10);
    for (i, l) in lines.iter().enumerate() {
        assert!(l.starts_with(&format!("{i},Accepted,")), "{l}");
    }

    let impostor = c.session(c.farthest_from_first(), 2).into_frames();
    let mut stream = genuine[..100].to_vec();
    stream.extend_from_slice(&impostor[..100]);
    write_rec(&path, "s01", stream);
    let o = c.monitor(1, &path);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[4].starts_with("4,Accepted,"));
    assert!(lines[5].starts_with("5,Rejected,"));
    assert_eq!(lines[6..], ["DEAUTH,ImpostorSuspected"]);

    let mut stream = genuine[..60].to_vec();
    stream.extend((0..60).map(|_| SensorFrame::vacant(0)));
    write_rec(&path, "s01", stream);
    let o = c.monitor(1, &path);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[3..], ["3,ChairVacant,0.0000", "DEAUTH,WalkedAway"]);

    // Same stream, same bytes.
    assert_eq!(stdout(&c.monitor(1, &path)), out);

    // Grace from a config file.
    let cfg = c.root.join("grace.cfg");
    fs::write(&cfg, "# tolerate one empty window\nvacancy_grace_windows=1\n").unwrap();
    let profile = c.root.join("profiles/s01.popa-profile");
    let o = popa(&[
        "--config",
        p(&cfg),
        "monitor",
        "--in",
        p(&path),
        "--profile",
        p(&profile),
        "--background",
        p(&c.root.join("profiles")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).ends_with("4,ChairVacant,0.0000\nDEAUTH,WalkedAway\n"), "{}", stdout(&o));
}

#[test]
fn monitor_reads_stdin() {
    let c = Cohort::new();
    let mut frames = c.session(2, 2).into_frames();
    frames.truncate(40);
    let text = write_csv(&SessionRecording::new("s02", "live", frames).unwrap());
    let mut child = Command::new(env!("CARGO_BIN_EXE_popa"))
        .args(["monitor", "--stdin", "--profile"])
        .arg(c.root.join("profiles/s02.popa-profile"))
        .arg("--background")
        .arg(c.root.join("profiles"))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(text.as_bytes()).unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn identify_names_subject_and_vacancy() {
    let c = Cohort::new();
    let mut frames = c.session(3, 2).into_frames();
    frames.truncate(60);
    frames.extend((0..20).map(|_| SensorFrame::vacant(0)));
    let path = c.root.join("who.csv");
    write_rec(&path, "unknown", frames);
    let o = ok(popa(&["identify", "--in", p(&path), "--profiles", p(&c.root.join("profiles"))]));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    for (i, l) in lines[..3].iter().enumerate() {
        assert!(l.starts_with(&format!("{i},s03,")), "{l}");
    }
    assert_eq!(lines[3], "3,VACANT,0.0000");
}

/// Three subjects with constant, well separated readings.
fn separable_corpus(dir: &Path, sessions: &[(&str, &str)]) {
    fs::create_dir_all(dir).unwrap();
    for &(subject, session) in sessions {
        let level: u16 = match subject {
            "a" => 100,
            "b" => 500,
            _ => 900,
        };
        let frames = (0..40u64)
            .map(|i| SensorFrame::new(i * FRAME_PERIOD_MS, [level + (i % 3) as u16; SENSOR_COUNT]).unwrap())
            .collect();
        let rec = SessionRecording::new(subject, session, frames).unwrap();
        fs::write(dir.join(format!("{subject}_{session}.csv")), write_csv(&rec)).unwrap();
    }
}

#[test]
fn evaluate_cv_and_permanence() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    separable_corpus(&data, &[("a", "1"), ("b", "1"), ("c", "1"), ("a", "2"), ("b", "2"), ("c", "2")]);
    let out = tmp.path().join("report.csv");
    let o = ok(popa(&[
        "evaluate", "--data", p(&data), "--algorithm", "knn1", "--repeats", "2", "--folds", "5", "--out", p(&out),
    ]));
    assert_eq!(stdout(&o).trim(), "knn1 cv: macro tpr=1.0000 fpr=0.0000 fnr=0.0000");
    let report = fs::read_to_string(&out).unwrap();
    assert!(report.starts_with("subject,tpr,fpr,fnr\na,1.0000,0.0000,0.0000\n"));
    assert!(report.ends_with("MACRO,1.0000,0.0000,0.0000\n"));
    // Non-canonical lengths are flagged, not refused.
    assert!(stderr(&o).contains("warning"));

    let o = ok(popa(&["evaluate", "--data", p(&data), "--mode", "permanence", "--out", p(&out)]));
    assert!(stdout(&o).starts_with("rf permanence: macro tpr=1.0000"));

    let uneven = tmp.path().join("uneven");
    separable_corpus(&uneven, &[("a", "1"), ("b", "1"), ("a", "2")]);
    let o = popa(&["evaluate", "--data", p(&uneven), "--mode", "permanence", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("only in training [\"b\"]"), "{}", stderr(&o));
}

#[test]
fn usage_and_runtime_errors_exit_one() {
    let help = popa(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("monitor"));

    assert_eq!(popa(&[]).status.code(), Some(1));
    assert_eq!(popa(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(popa(&["synth", "--bogus", "--out", "x"]).status.code(), Some(1));
    assert_eq!(popa(&["--jobs", "0", "synth", "--out", "x"]).status.code(), Some(1));
    assert_eq!(popa(&["enroll", "--in", "/nonexistent.csv", "--profiles", "/tmp"]).status.code(), Some(1));
    assert_eq!(popa(&["evaluate", "--data", "/nonexistent", "--out", "/tmp/r.csv"]).status.code(), Some(1));

    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "seed=3\nwindow_size=20\n").unwrap();
    let o = popa(&["--config", p(&cfg), "synth", "--out", p(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2: unknown key \"window_size\""), "{}", stderr(&o));

    let o = Command::new(env!("CARGO_BIN_EXE_popa"))
        .args(["synth", "--subjects", "1", "--duration-s", "5", "--out"])
        .arg(tmp.path().join("env"))
        .env("POPA_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1), "config from the environment is honoured");
}
