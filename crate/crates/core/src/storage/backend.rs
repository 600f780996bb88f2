use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

/// A hierarchical byte store addressed by path segments.
///
/// Implementations must make `write` atomic: readers see either the old or
/// the new content, never a partial file.
pub trait Backend: Send + Sync {
    fn read(&self, path: &[&str]) -> io::Result<Option<Vec<u8>>>;
    fn write(&self, path: &[&str], bytes: &[u8]) -> io::Result<()>;
    /// Names of the immediate children of `dir`, sorted. Missing
    /// directories list as empty.
    fn list(&self, dir: &[&str]) -> io::Result<Vec<String>>;
    fn create_dir(&self, dir: &[&str]) -> io::Result<()>;
    fn exists(&self, path: &[&str]) -> io::Result<bool>;
}

/// Files under a root directory.
#[derive(Debug)]
pub struct FsBackend {
    root: PathBuf,
}

impl FsBackend {
    pub fn new(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn resolve(&self, path: &[&str]) -> PathBuf {
        let mut p = self.root.clone();
        p.extend(path);
        p
    }
}

impl Backend for FsBackend {
    fn read(&self, path: &[&str]) -> io::Result<Option<Vec<u8>>> {
        match fs::read(self.resolve(path)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn write(&self, path: &[&str], bytes: &[u8]) -> io::Result<()> {
        let target = self.resolve(path);
        let dir = target.parent().expect("path has a parent");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile_in(dir)?;
        tmp.1.write_all(bytes)?;
        tmp.1.sync_all()?;
        drop(tmp.1);
        fs::rename(&tmp.0, &target)
    }

    fn list(&self, dir: &[&str]) -> io::Result<Vec<String>> {
        let rd = match fs::read_dir(self.resolve(dir)) {
            Ok(rd) => rd,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut names = Vec::new();
        for entry in rd {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if !name.starts_with(".tmp-") {
                names.push(name);
            }
        }
        names.sort();
        Ok(names)
    }

    fn create_dir(&self, dir: &[&str]) -> io::Result<()> {
        fs::create_dir_all(self.resolve(dir))
    }

    fn exists(&self, path: &[&str]) -> io::Result<bool> {
        self.resolve(path).try_exists()
    }
}

fn tempfile_in(dir: &Path) -> io::Result<(PathBuf, fs::File)> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    loop {
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        let p = dir.join(format!(".tmp-{}-{n}", std::process::id()));
        match fs::OpenOptions::new().write(true).create_new(true).open(&p) {
            Ok(f) => return Ok((p, f)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
}

/// Volatile in-process store, mostly for tests.
#[derive(Debug, Default)]
pub struct MemBackend {
    inner: RwLock<MemInner>,
}

#[derive(Debug, Default)]
struct MemInner {
    files: BTreeMap<Vec<String>, Vec<u8>>,
    dirs: BTreeSet<Vec<String>>,
}

fn owned(path: &[&str]) -> Vec<String> {
    path.iter().map(|s| s.to_string()).collect()
}

impl Backend for MemBackend {
    fn read(&self, path: &[&str]) -> io::Result<Option<Vec<u8>>> {
        Ok(self.inner.read().unwrap().files.get(&owned(path)).cloned())
    }

    fn write(&self, path: &[&str], bytes: &[u8]) -> io::Result<()> {
        let mut inner = self.inner.write().unwrap();
        for i in 1..path.len() {
            inner.dirs.insert(owned(&path[..i]));
        }
        inner.files.insert(owned(path), bytes.to_vec());
        Ok(())
    }

    fn list(&self, dir: &[&str]) -> io::Result<Vec<String>> {
        let inner = self.inner.read().unwrap();
        let dir = owned(dir);
        let children: BTreeSet<String> = inner
            .files
            .keys()
            .chain(inner.dirs.iter())
            .filter(|p| p.len() > dir.len() && p[..dir.len()] == dir[..])
            .map(|p| p[dir.len()].clone())
            .collect();
        Ok(children.into_iter().collect())
    }

    fn create_dir(&self, dir: &[&str]) -> io::Result<()> {
        let mut inner = self.inner.write().unwrap();
        for i in 1..=dir.len() {
            inner.dirs.insert(owned(&dir[..i]));
        }
        Ok(())
    }

    fn exists(&self, path: &[&str]) -> io::Result<bool> {
        let inner = self.inner.read().unwrap();
        let p = owned(path);
        Ok(inner.files.contains_key(&p) || inner.dirs.contains(&p))
    }
}
