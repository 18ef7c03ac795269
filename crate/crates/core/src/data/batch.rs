use super::vocab::{Vocab, EOS, PAD, SOS, UNK};
use super::Example;
use crate::tensor::Tensor;

/// Padded, id-mapped view of a group of examples.
///
/// Id matrices are row-major `[size, src_len]` or `[size, tgt_len]`. Source
/// words missing from the word vocabulary get per-example extended ids
/// `vocab_size + k` in first-occurrence order; `oovs[b][k]` is the word.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub vocab_size: usize,
    pub src_ids: Vec<usize>,
    pub src_ext_ids: Vec<usize>,
    pub src_lengths: Vec<usize>,
    pub src_mask: Tensor,
    pub pos_ids: Option<Vec<usize>>,
    pub dep_ids: Option<Vec<usize>>,
    /// Decoder inputs under teacher forcing: `<s> y1 .. yn`, OOV as UNK.
    pub dec_inputs: Vec<usize>,
    /// Gold outputs over the base vocabulary: `y1 .. yn </s>`.
    pub tgt_gen: Vec<usize>,
    /// Gold outputs over the extended vocabulary (copyable OOVs keep their
    /// extended id, other OOVs become UNK).
    pub tgt_copy: Vec<usize>,
    pub tgt_lengths: Vec<usize>,
    pub tgt_mask: Tensor,
    pub oovs: Vec<Vec<String>>,
    pub sources: Vec<Vec<String>>,
    pub targets: Vec<Vec<String>>,
}

impl Batch {
    pub fn max_oov(&self) -> usize {
        self.oovs.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Width of the extended distribution shared by every row.
    pub fn ext_width(&self) -> usize {
        self.vocab_size + self.max_oov()
    }

    /// `[size, 1]` mask column for source position `t`.
    pub fn src_mask_col(&self, t: usize) -> Tensor {
        let data = (0..self.size)
            .map(|b| self.src_mask.get2(b, t))
            .collect();
        Tensor::new(vec![self.size, 1], data).expect("mask column")
    }

    pub fn tgt_mask_col(&self, t: usize) -> Tensor {
        let data = (0..self.size)
            .map(|b| self.tgt_mask.get2(b, t))
            .collect();
        Tensor::new(vec![self.size, 1], data).expect("mask column")
    }

    pub fn src_column(ids: &[usize], size: usize, len: usize, t: usize) -> Vec<usize> {
        (0..size).map(|b| ids[b * len + t]).collect()
    }

    /// Renders an extended id for example `b`.
    pub fn render(&self, b: usize, id: usize, vocab: &Vocab) -> String {
        if id < self.vocab_size {
            vocab.token(id).unwrap_or("<unk>").to_string()
        } else {
            self.oovs[b]
                .get(id - self.vocab_size)
                .cloned()
                .unwrap_or_else(|| "<unk>".to_string())
        }
    }

    /// Recovers each example's source tokens from the padded id matrix.
    pub fn unpad_sources(&self, vocab: &Vocab) -> Vec<Vec<String>> {
        (0..self.size)
            .map(|b| {
                (0..self.src_lengths[b])
                    .map(|t| self.render(b, self.src_ext_ids[b * self.src_len + t], vocab))
                    .collect()
            })
            .collect()
    }

    /// Recovers target tokens from the copy view (EOS dropped).
    pub fn unpad_targets(&self, vocab: &Vocab) -> Vec<Vec<String>> {
        (0..self.size)
            .map(|b| {
                (0..self.tgt_lengths[b] - 1)
                    .map(|t| self.render(b, self.tgt_copy[b * self.tgt_len + t], vocab))
                    .collect()
            })
            .collect()
    }
}

fn tag_matrix(
    examples: &[Example],
    pick: impl Fn(&Example) -> Option<&Vec<String>>,
    vocab: &Vocab,
    src_len: usize,
) -> Option<Vec<usize>> {
    let mut ids = vec![PAD; examples.len() * src_len];
    for (b, ex) in examples.iter().enumerate() {
        let tags = pick(ex)?;
        for (t, tag) in tags.iter().enumerate() {
            ids[b * src_len + t] = vocab.id_or_unk(tag);
        }
    }
    Some(ids)
}

/// Pads and maps a group of examples. A tag channel is present only when
/// every example carries it.
pub fn make_batch(examples: &[Example], words: &Vocab, pos: &Vocab, dep: &Vocab) -> Batch {
    let size = examples.len();
    let src_len = examples.iter().map(|e| e.source.len()).max().unwrap_or(1);
    let tgt_len = examples.iter().map(|e| e.target.len() + 1).max().unwrap_or(1);
    let vocab_size = words.len();

    let mut src_ids = vec![PAD; size * src_len];
    let mut src_ext_ids = vec![PAD; size * src_len];
    let mut src_mask = vec![0.0; size * src_len];
    let mut dec_inputs = vec![PAD; size * tgt_len];
    let mut tgt_gen = vec![PAD; size * tgt_len];
    let mut tgt_copy = vec![PAD; size * tgt_len];
    let mut tgt_mask = vec![0.0; size * tgt_len];
    let mut oovs = Vec::with_capacity(size);

    for (b, ex) in examples.iter().enumerate() {
        let mut ex_oovs: Vec<String> = Vec::new();
        for (t, w) in ex.source.iter().enumerate() {
            let i = b * src_len + t;
            src_mask[i] = 1.0;
            match words.id(w) {
                Some(id) => {
                    src_ids[i] = id;
                    src_ext_ids[i] = id;
                }
                None => {
                    src_ids[i] = UNK;
                    let k = match ex_oovs.iter().position(|o| o == w) {
                        Some(k) => k,
                        None => {
                            ex_oovs.push(w.clone());
                            ex_oovs.len() - 1
                        }
                    };
                    src_ext_ids[i] = vocab_size + k;
                }
            }
        }
        for t in 0..=ex.target.len() {
            let i = b * tgt_len + t;
            tgt_mask[i] = 1.0;
            dec_inputs[i] = if t == 0 {
                SOS
            } else {
                words.id_or_unk(&ex.target[t - 1])
            };
            if t == ex.target.len() {
                tgt_gen[i] = EOS;
                tgt_copy[i] = EOS;
            } else {
                let w = &ex.target[t];
                tgt_gen[i] = words.id_or_unk(w);
                tgt_copy[i] = match words.id(w) {
                    Some(id) => id,
                    None => ex_oovs
                        .iter()
                        .position(|o| o == w)
                        .map_or(UNK, |k| vocab_size + k),
                };
            }
        }
        oovs.push(ex_oovs);
    }

    Batch {
        size,
        src_len,
        tgt_len,
        vocab_size,
        src_ids,
        src_ext_ids,
        src_lengths: examples.iter().map(|e| e.source.len()).collect(),
        src_mask: Tensor::new(vec![size, src_len], src_mask).expect("source mask"),
        pos_ids: tag_matrix(examples, |e| e.pos.as_ref(), pos, src_len),
        dep_ids: tag_matrix(examples, |e| e.dep.as_ref(), dep, src_len),
        dec_inputs,
        tgt_gen,
        tgt_copy,
        tgt_lengths: examples.iter().map(|e| e.target.len() + 1).collect(),
        tgt_mask: Tensor::new(vec![size, tgt_len], tgt_mask).expect("target mask"),
        oovs,
        sources: examples.iter().map(|e| e.source.clone()).collect(),
        targets: examples.iter().map(|e| e.target.clone()).collect(),
    }
}
