//! Labeled flaky-test manifest and the pinned-commit source cache.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable that overrides the default source cache directory.
pub const CACHE_ENV: &str = "FLAKECAT_CACHE";

/// Root-cause category of a flaky test. Integer codes follow declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CategoryLabel {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OD")]
    Od,
    #[serde(rename = "OD_VIC")]
    OdVic,
    #[serde(rename = "OD_BRIT")]
    OdBrit,
    #[serde(rename = "NOD")]
    Nod,
    #[serde(rename = "NDOD")]
    Ndod,
    #[serde(rename = "UD")]
    Ud,
}

impl CategoryLabel {
    pub const COUNT: usize = 7;
    pub const ALL: [CategoryLabel; 7] = [
        CategoryLabel::Id,
        CategoryLabel::Od,
        CategoryLabel::OdVic,
        CategoryLabel::OdBrit,
        CategoryLabel::Nod,
        CategoryLabel::Ndod,
        CategoryLabel::Ud,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CategoryLabel::Id => "ID",
            CategoryLabel::Od => "OD",
            CategoryLabel::OdVic => "OD_VIC",
            CategoryLabel::OdBrit => "OD_BRIT",
            CategoryLabel::Nod => "NOD",
            CategoryLabel::Ndod => "NDOD",
            CategoryLabel::Ud => "UD",
        }
    }

    /// Category names in code order, for labelling reports.
    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.as_str().to_string()).collect()
    }
}

impl fmt::Display for CategoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown category `{0}`")]
pub struct UnknownCategory(pub String);

impl FromStr for CategoryLabel {
    type Err = UnknownCategory;

    /// Case-insensitive; `-` and spaces are treated like `_`, and the long
    /// forms `OD-Victim` / `OD-Brittle` are accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .map(|c| match c {
                '-' | ' ' => '_',
                c => c.to_ascii_uppercase(),
            })
            .collect();
        Ok(match norm.as_str() {
            "ID" => CategoryLabel::Id,
            "OD" => CategoryLabel::Od,
            "OD_VIC" | "OD_VICTIM" => CategoryLabel::OdVic,
            "OD_BRIT" | "OD_BRITTLE" => CategoryLabel::OdBrit,
            "NOD" => CategoryLabel::Nod,
            "NDOD" => CategoryLabel::Ndod,
            "UD" => CategoryLabel::Ud,
            _ => return Err(UnknownCategory(s.to_string())),
        })
    }
}

/// One labeled flaky test pinned to a commit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TestRecord {
    pub project_url: String,
    pub sha: String,
    pub test_id: String,
    pub label: CategoryLabel,
}

fn is_valid_sha(sha: &str) -> bool {
    sha.len() == 40 && sha.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

impl TestRecord {
    /// Validates the record invariants.
    pub fn new(
        project_url: impl Into<String>,
        sha: impl Into<String>,
        test_id: impl Into<String>,
        label: CategoryLabel,
    ) -> Option<Self> {
        let rec = TestRecord {
            project_url: project_url.into(),
            sha: sha.into(),
            test_id: test_id.into(),
            label,
        };
        rec.is_valid().then_some(rec)
    }

    pub fn is_valid(&self) -> bool {
        !self.project_url.trim().is_empty()
            && is_valid_sha(&self.sha)
            && self.test_id.matches('.').count() >= 2
    }

    fn segments(&self) -> Vec<&str> {
        self.test_id.split('.').collect()
    }

    /// Test method name with any parameterization suffix (`name[3]`) removed.
    pub fn method_name(&self) -> &str {
        let last = self.test_id.rsplit('.').next().unwrap_or("");
        last.split('[').next().unwrap_or(last)
    }

    /// Top-level class simple name (`Outer$Inner` resolves to `Outer`).
    pub fn class_name(&self) -> &str {
        let segs = self.segments();
        let class = segs[segs.len().saturating_sub(2)];
        class.split('$').next().unwrap_or(class)
    }

    pub fn package(&self) -> Vec<&str> {
        let segs = self.segments();
        segs[..segs.len().saturating_sub(2)].to_vec()
    }

    /// Package-derived relative path of the test class file, e.g.
    /// `org/foo/BarTest.java`.
    pub fn relative_source_path(&self) -> PathBuf {
        let mut p = PathBuf::new();
        for seg in self.package() {
            p.push(seg);
        }
        p.push(format!("{}.java", self.class_name()));
        p
    }

    /// Cache location `<cache_dir>/<sha>/<package path>/<Class>.java`.
    pub fn cache_path(&self, cache_dir: &Path) -> PathBuf {
        cache_dir.join(&self.sha).join(self.relative_source_path())
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest header lacks required column `{0}`")]
    MissingColumn(&'static str),
    #[error("malformed manifest row at line {0}")]
    MalformedRow(u64),
    #[error("unknown category at line {0}: `{1}`")]
    UnknownCategory(u64, String),
    #[error("duplicate (project_url, sha, test_id) at line {0}")]
    DuplicateRecord(u64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Ordered list of records plus the cache directory their sources live in.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<TestRecord>,
    pub cache_dir: PathBuf,
}

/// Cache directory from `FLAKECAT_CACHE`, falling back to `.flakecat-cache`.
pub fn default_cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".flakecat-cache"))
}

// Header names are matched after lowercasing; the long IDoFT headers are
// accepted as aliases so the raw dataset export loads directly.
fn column_role(header: &str) -> Option<&'static str> {
    let h = header.trim().to_ascii_lowercase();
    match h.as_str() {
        "project_url" | "project url" => Some("project_url"),
        "sha" | "sha detected" => Some("sha"),
        "test_id" => Some("test_id"),
        "category" => Some("category"),
        _ if h.starts_with("fully-qualified test name") => Some("test_id"),
        _ => None,
    }
}

impl Corpus {
    pub fn new(records: Vec<TestRecord>, cache_dir: impl Into<PathBuf>) -> Self {
        Corpus {
            records,
            cache_dir: cache_dir.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Label codes in record order.
    pub fn label_codes(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label.code()).collect()
    }

    pub fn test_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.test_id.clone()).collect()
    }
}

/// Loads a manifest CSV. The cache directory comes from [`default_cache_dir`].
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus, ManifestError> {
    let file = std::fs::File::open(path.as_ref())?;
    let records = read_manifest(file)?;
    Ok(Corpus::new(records, default_cache_dir()))
}

/// Parses manifest rows from any reader. Extra columns are ignored.
pub fn read_manifest<R: std::io::Read>(reader: R) -> Result<Vec<TestRecord>, ManifestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx: BTreeMap<&'static str, usize> = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(role) = column_role(h) {
            idx.entry(role).or_insert(i);
        }
    }
    let col = |name: &'static str| idx.get(name).copied().ok_or(ManifestError::MissingColumn(name));
    let (c_url, c_sha, c_test, c_cat) = (col("project_url")?, col("sha")?, col("test_id")?, col("category")?);
    let width = headers.len();

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != width {
            return Err(ManifestError::MalformedRow(line));
        }
        let raw_cat = &row[c_cat];
        let label: CategoryLabel = raw_cat
            .parse()
            .map_err(|_| ManifestError::UnknownCategory(line, raw_cat.to_string()))?;
        let record = TestRecord::new(&row[c_url], &row[c_sha], &row[c_test], label)
            .ok_or(ManifestError::MalformedRow(line))?;
        if !seen.insert((record.project_url.clone(), record.sha.clone(), record.test_id.clone())) {
            return Err(ManifestError::DuplicateRecord(line));
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes the 4-column manifest `project_url,sha,test_id,category`.
pub fn save_manifest(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), ManifestError> {
    let file = std::fs::File::create(path.as_ref())?;
    write_manifest(&corpus.records, file)
}

pub fn write_manifest<W: Write>(records: &[TestRecord], writer: W) -> Result<(), ManifestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["project_url", "sha", "test_id", "category"])?;
    for r in records {
        w.write_record([r.project_url.as_str(), &r.sha, &r.test_id, r.label.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Record count per category; every category is present, zeros included.
pub fn class_distribution(corpus: &Corpus) -> BTreeMap<CategoryLabel, usize> {
    let mut counts: BTreeMap<CategoryLabel, usize> =
        CategoryLabel::ALL.iter().map(|&c| (c, 0)).collect();
    for r in &corpus.records {
        *counts.entry(r.label).or_default() += 1;
    }
    counts
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("git {step} failed for {url}@{sha}: {detail}")]
    Git {
        step: &'static str,
        url: String,
        sha: String,
        detail: String,
    },
    #[error("offline mode and no cache entry at {0}")]
    CacheMiss(PathBuf),
    #[error("no `{file}` found in {url}@{sha}")]
    SourceNotFound { url: String, sha: String, file: String },
    #[error("`{file}` is ambiguous in {url}@{sha}: {candidates:?}")]
    AmbiguousSource {
        url: String,
        sha: String,
        file: String,
        candidates: Vec<String>,
    },
    #[error("cache io: {0}")]
    Io(#[from] std::io::Error),
}

/// Fetches test-class sources at their pinned commit through the `git` CLI and
/// keeps them in an on-disk cache.
#[derive(Debug, Clone)]
pub struct SourceFetcher {
    pub cache_dir: PathBuf,
    pub offline: bool,
    pub git: PathBuf,
}

impl SourceFetcher {
    pub fn new(cache_dir: impl Into<PathBuf>, offline: bool) -> Self {
        SourceFetcher {
            cache_dir: cache_dir.into(),
            offline,
            git: PathBuf::from("git"),
        }
    }

    /// Returns the full class file containing the record's test.
    ///
    /// A cache hit never spawns a process. Cache entries are written to a
    /// temporary file in the target directory and renamed into place.
    pub fn fetch(&self, record: &TestRecord) -> Result<String, FetchError> {
        let cached = record.cache_path(&self.cache_dir);
        if cached.is_file() {
            return Ok(std::fs::read_to_string(&cached)?);
        }
        if self.offline {
            return Err(FetchError::CacheMiss(cached));
        }
        let source = self.fetch_from_remote(record)?;
        let parent = cached.parent().expect("cache path has a parent");
        std::fs::create_dir_all(parent)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        tmp.write_all(source.as_bytes())?;
        tmp.persist(&cached).map_err(|e| FetchError::Io(e.error))?;
        Ok(source)
    }

    fn git(&self, dir: &Path, step: &'static str, record: &TestRecord, args: &[&str]) -> Result<String, FetchError> {
        let fail = |detail: String| FetchError::Git {
            step,
            url: record.project_url.clone(),
            sha: record.sha.clone(),
            detail,
        };
        let out = Command::new(&self.git)
            .current_dir(dir)
            .args(args)
            .env("GIT_TERMINAL_PROMPT", "0")
            .output()
            .map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(String::from_utf8_lossy(&out.stderr).trim().to_string()));
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }

    fn fetch_from_remote(&self, record: &TestRecord) -> Result<String, FetchError> {
        std::fs::create_dir_all(&self.cache_dir)?;
        let work = tempfile::Builder::new()
            .prefix(".fetch-")
            .tempdir_in(&self.cache_dir)?;
        let dir = work.path();
        self.git(dir, "init", record, &["init", "-q"])?;
        self.git(
            dir,
            "fetch",
            record,
            &["fetch", "-q", "--depth", "1", &record.project_url, &record.sha],
        )?;
        let listing = self.git(dir, "ls-tree", record, &["ls-tree", "-r", "--name-only", &record.sha])?;
        let path = locate_class_file(&listing, record)?;
        self.git(dir, "checkout", record, &["checkout", "-q", &record.sha, "--", &path])?;
        Ok(std::fs::read_to_string(dir.join(&path))?)
    }
}

/// Picks the repository path of the record's class file from a `git ls-tree`
/// listing: all files named `<Class>.java`, narrowed by package suffix when
/// there is more than one. Anything still ambiguous is an error.
pub fn locate_class_file(listing: &str, record: &TestRecord) -> Result<String, FetchError> {
    let file = format!("{}.java", record.class_name());
    let candidates: Vec<&str> = listing
        .lines()
        .map(str::trim)
        .filter(|p| p.rsplit('/').next() == Some(file.as_str()))
        .collect();
    let narrowed: Vec<&str> = if candidates.len() > 1 {
        let suffix = record.relative_source_path().to_string_lossy().replace('\\', "/");
        candidates
            .iter()
            .copied()
            .filter(|p| *p == suffix || p.ends_with(&format!("/{suffix}")))
            .collect()
    } else {
        candidates.clone()
    };
    match narrowed.as_slice() {
        [one] => Ok(one.to_string()),
        [] if candidates.is_empty() => Err(FetchError::SourceNotFound {
            url: record.project_url.clone(),
            sha: record.sha.clone(),
            file,
        }),
        _ => Err(FetchError::AmbiguousSource {
            url: record.project_url.clone(),
            sha: record.sha.clone(),
            file,
            candidates: candidates.iter().map(|s| s.to_string()).collect(),
        }),
    }
}

/// Convenience wrapper over [`SourceFetcher`] using the system `git`.
pub fn fetch_source(record: &TestRecord, cache_dir: &Path, offline: bool) -> Result<String, FetchError> {
    SourceFetcher::new(cache_dir, offline).fetch(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHA: &str = "0123456789abcdef0123456789abcdef01234567";

    fn manifest(body: &str) -> Result<Vec<TestRecord>, ManifestError> {
        read_manifest(format!("project_url,sha,test_id,category\n{body}").as_bytes())
    }

    #[test]
    fn header_only_is_empty() {
        assert!(manifest("").unwrap().is_empty());
    }

    #[test]
    fn long_sha_is_malformed_row_two() {
        let err = manifest(&format!("https://x/y,{SHA}0,a.B.c,ID\n")).unwrap_err();
        assert!(matches!(err, ManifestError::MalformedRow(2)), "{err:?}");
    }

    #[test]
    fn wrong_column_count_and_unknown_category() {
        let err = manifest(&format!("https://x/y,{SHA},a.B.c,ID\nhttps://x/y,{SHA},a.B.d\n")).unwrap_err();
        assert!(matches!(err, ManifestError::MalformedRow(3)), "{err:?}");
        let err = manifest(&format!("https://x/y,{SHA},a.B.c,FLAKY\n")).unwrap_err();
        assert!(matches!(err, ManifestError::UnknownCategory(2, ref t) if t == "FLAKY"));
    }

    #[test]
    fn aliases_crlf_and_extra_columns() {
        let text = format!(
            "Project URL,SHA Detected,Module Path,Fully-Qualified Test Name (packageName.ClassName.methodName),Category,Status\r\n\
             https://x/y,{SHA},core,a.B.c,OD-Vic,Accepted\r\n\
             https://x/y,{SHA},core,a.B.d,od-brit,\r\n"
        );
        let recs = read_manifest(text.as_bytes()).unwrap();
        assert_eq!(recs[0].label, CategoryLabel::OdVic);
        assert_eq!(recs[1].label, CategoryLabel::OdBrit);
        assert_eq!(recs[1].test_id, "a.B.d");
    }

    #[test]
    fn duplicate_triple_rejected() {
        let err = manifest(&format!("u,{SHA},a.B.c,ID\nu,{SHA},a.B.c,OD\n")).unwrap_err();
        assert!(matches!(err, ManifestError::DuplicateRecord(3)));
    }

    #[test]
    fn distribution_counts() {
        let nod = |m: &str| TestRecord::new("u", SHA, format!("p.C.{m}"), CategoryLabel::Nod).unwrap();
        let corpus = Corpus::new(vec![nod("a"), nod("b"), nod("c")], "cache");
        let dist = class_distribution(&corpus);
        assert_eq!(dist[&CategoryLabel::Nod], 3);
        assert_eq!(dist.values().sum::<usize>(), 3);
        assert_eq!(dist.len(), 7);
        let empty = class_distribution(&Corpus::new(vec![], "cache"));
        assert!(empty.values().all(|&c| c == 0));
    }

    #[test]
    fn test_id_parts() {
        let r = TestRecord::new("u", SHA, "org.foo.Outer$Inner.testX[2]", CategoryLabel::Id).unwrap();
        assert_eq!(r.method_name(), "testX");
        assert_eq!(r.class_name(), "Outer");
        assert_eq!(r.relative_source_path(), PathBuf::from("org/foo/Outer.java"));
        assert!(TestRecord::new("u", SHA, "Cls.method", CategoryLabel::Id).is_none());
        assert!(TestRecord::new("", SHA, "a.B.c", CategoryLabel::Id).is_none());
    }

    #[test]
    fn locate_narrows_by_package_and_reports_ambiguity() {
        let r = TestRecord::new("u", SHA, "org.foo.BarTest.t", CategoryLabel::Id).unwrap();
        let listing = "a/src/test/java/org/foo/BarTest.java\nb/src/test/java/org/other/BarTest.java\nREADME\n";
        assert_eq!(locate_class_file(listing, &r).unwrap(), "a/src/test/java/org/foo/BarTest.java");
        let dup = "a/org/foo/BarTest.java\nb/org/foo/BarTest.java\n";
        assert!(matches!(locate_class_file(dup, &r), Err(FetchError::AmbiguousSource { .. })));
        assert!(matches!(locate_class_file("x/Y.java", &r), Err(FetchError::SourceNotFound { .. })));
    }

    #[test]
    fn category_codes_stable() {
        for (i, c) in CategoryLabel::ALL.iter().enumerate() {
            assert_eq!(c.code(), i);
            assert_eq!(CategoryLabel::from_code(i), Some(*c));
            assert_eq!(c.as_str().parse::<CategoryLabel>().unwrap(), *c);
        }
    }
}
