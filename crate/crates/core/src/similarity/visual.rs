use std::io::{BufReader, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Mutex, OnceLock};

use crate::hash::hash_words;
use crate::molgraph::{canonicalize, parse_smiles, MolGraph, StereoMode};

use super::fingerprint::{morgan_fingerprint, DEFAULT_RADIUS, DEFAULT_WIDTH};
use super::SimilarityError;

pub const EMBED_DIM: usize = 128;
const STUB_SEED: u64 = 0x005e_ed0f_5715;

/// Turns a molecule into the byte input of an [`EmbeddingProvider`].
pub trait Renderer: Send + Sync {
    fn render(&self, g: &MolGraph) -> Result<Vec<u8>, SimilarityError>;
}

/// Renders a molecule as its canonical SMILES bytes. Stands in for a
/// depiction: any two spellings of one molecule render identically.
#[derive(Debug, Clone, Copy, Default)]
pub struct CanonicalSketch;

impl Renderer for CanonicalSketch {
    fn render(&self, g: &MolGraph) -> Result<Vec<u8>, SimilarityError> {
        canonicalize(g, StereoMode::PreserveTetrahedral)
            .map(String::into_bytes)
            .map_err(|e| SimilarityError::InvalidMolecule(e.to_string()))
    }
}

/// Maps a rendering to a unit-norm vector of fixed dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, rendering: &[u8]) -> Result<Vec<f64>, SimilarityError>;

    /// Whether `embed` may be called from several threads at once. Callers
    /// must serialize calls when this is false.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Deterministic stand-in for a learned visual encoder: the Morgan
/// fingerprint of the rendered molecule, projected through a fixed
/// hash-seeded matrix with entries in [-1, 1) and normalized.
#[derive(Debug, Clone)]
pub struct StubProvider {
    /// Row-major `DEFAULT_WIDTH × EMBED_DIM`.
    matrix: Vec<f64>,
}

impl Default for StubProvider {
    fn default() -> Self {
        Self::with_seed(STUB_SEED)
    }
}

impl StubProvider {
    pub fn with_seed(seed: u64) -> Self {
        let matrix = (0..DEFAULT_WIDTH * EMBED_DIM)
            .map(|k| {
                let h = hash_words(&[seed, k as u64]);
                (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect();
        Self { matrix }
    }

    /// Shared instance with the default seed.
    pub fn shared() -> &'static StubProvider {
        static STUB: OnceLock<StubProvider> = OnceLock::new();
        STUB.get_or_init(StubProvider::default)
    }

    pub fn embed_graph(&self, g: &MolGraph) -> Result<Vec<f64>, SimilarityError> {
        let fp = morgan_fingerprint(g, DEFAULT_RADIUS, DEFAULT_WIDTH)?;
        let mut v = vec![0.0; EMBED_DIM];
        for bit in fp.ones() {
            let row = &self.matrix[bit * EMBED_DIM..(bit + 1) * EMBED_DIM];
            for (acc, &x) in v.iter_mut().zip(row) {
                *acc += x;
            }
        }
        normalize(v)
    }
}

impl EmbeddingProvider for StubProvider {
    fn dim(&self) -> usize {
        EMBED_DIM
    }

    fn embed(&self, rendering: &[u8]) -> Result<Vec<f64>, SimilarityError> {
        let text = std::str::from_utf8(rendering)
            .map_err(|_| SimilarityError::ProviderFailure("rendering is not UTF-8".into()))?;
        let g = parse_smiles(text)
            .map_err(|e| SimilarityError::ProviderFailure(format!("unreadable rendering: {e}")))?;
        self.embed_graph(&g)
    }
}

fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>, SimilarityError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(SimilarityError::ProviderFailure(
            "embedding has zero or non-finite norm".into(),
        ));
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

/// Provider backed by an external process.
///
/// Wire format on the child's stdin/stdout, one exchange per call: request
/// is a `u32` little-endian byte length followed by the rendering; response
/// is `EMBED_DIM` little-endian `f32` values.
pub struct SubprocessProvider {
    io: Mutex<ChildIo>,
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl SubprocessProvider {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, SimilarityError> {
        let fail = |e: std::io::Error| {
            SimilarityError::ProviderFailure(format!("cannot start {program}: {e}"))
        };
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(fail)?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(Self {
            io: Mutex::new(ChildIo {
                child,
                stdin,
                stdout,
            }),
        })
    }
}

impl EmbeddingProvider for SubprocessProvider {
    fn dim(&self) -> usize {
        EMBED_DIM
    }

    fn embed(&self, rendering: &[u8]) -> Result<Vec<f64>, SimilarityError> {
        let fail = |e: std::io::Error| SimilarityError::ProviderFailure(e.to_string());
        let mut io = self
            .io
            .lock()
            .map_err(|_| SimilarityError::ProviderFailure("provider lock poisoned".into()))?;
        let len = u32::try_from(rendering.len())
            .map_err(|_| SimilarityError::ProviderFailure("rendering too large".into()))?;
        io.stdin.write_all(&len.to_le_bytes()).map_err(fail)?;
        io.stdin.write_all(rendering).map_err(fail)?;
        io.stdin.flush().map_err(fail)?;
        let mut buf = [0u8; EMBED_DIM * 4];
        io.stdout.read_exact(&mut buf).map_err(fail)?;
        let v = buf
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        normalize(v)
    }
}

impl Drop for SubprocessProvider {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

/// Serve stub embeddings over the subprocess wire format until `input`
/// reaches end of stream. Unreadable renderings get a zero vector.
pub fn serve_stub(mut input: impl Read, mut output: impl Write) -> std::io::Result<()> {
    let stub = StubProvider::shared();
    loop {
        let mut len = [0u8; 4];
        match input.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        }
        let mut body = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut body)?;
        let v = stub.embed(&body).unwrap_or_else(|_| vec![0.0; EMBED_DIM]);
        let mut bytes = Vec::with_capacity(EMBED_DIM * 4);
        for x in v {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
        output.write_all(&bytes)?;
        output.flush()?;
    }
}

/// Cosine of two embeddings, clamped below at 0.
pub fn cosine_clamped(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// Visual similarity of two SMILES strings under a renderer and provider.
pub fn visual_similarity(
    pred: &str,
    truth: &str,
    provider: &dyn EmbeddingProvider,
    renderer: &dyn Renderer,
) -> Result<f64, SimilarityError> {
    let embed = |s: &str| -> Result<Vec<f64>, SimilarityError> {
        let g = parse_smiles(s).map_err(|e| SimilarityError::InvalidMolecule(e.to_string()))?;
        provider.embed(&renderer.render(&g)?)
    };
    let (a, b) = (embed(pred)?, embed(truth)?);
    if a.len() != b.len() {
        return Err(SimilarityError::ProviderFailure(format!(
            "embedding dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(cosine_clamped(&a, &b))
}
