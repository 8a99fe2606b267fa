use std::ops::Range;

use super::ModelConfig;
use crate::diff::ParamId;
use crate::env::CHANNELS;

/// One named tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub fan_in: usize,
    pub is_bias: bool,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Mlp {
    pub l1: Dense,
    pub l2: Dense,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvEncoder {
    pub conv1: Dense,
    pub conv2: Dense,
    pub fc: Dense,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GruIds {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub b_input: ParamId,
    pub b_hidden: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ParamIds {
    /// Front, side.
    pub encoders: [ConvEncoder; 2],
    pub posterior: Mlp,
    pub transition_in: Dense,
    pub gru: GruIds,
    pub prior: Mlp,
    pub reward: Mlp,
    /// Front, side.
    pub decoders: [Mlp; 2],
}

/// Names, shapes and offsets of every parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
    ids: ParamIds,
}

struct Builder {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, fan_in: usize, is_bias: bool) -> ParamId {
        let entry = ParamEntry {
            name,
            shape,
            offset: self.total,
            fan_in,
            is_bias,
        };
        self.total += entry.len();
        self.entries.push(entry);
        ParamId(self.entries.len() - 1)
    }

    fn dense(&mut self, name: &str, inp: usize, out: usize) -> Dense {
        Dense {
            w: self.push(format!("{name}.w"), vec![out, inp], inp, false),
            b: self.push(format!("{name}.b"), vec![out], inp, true),
        }
    }

    fn conv(&mut self, name: &str, inp: usize, out: usize, k: usize) -> Dense {
        let fan_in = inp * k * k;
        Dense {
            w: self.push(format!("{name}.w"), vec![out, inp, k, k], fan_in, false),
            b: self.push(format!("{name}.b"), vec![out], fan_in, true),
        }
    }

    fn mlp(&mut self, name: &str, inp: usize, hidden: usize, out: usize) -> Mlp {
        Mlp {
            l1: self.dense(&format!("{name}.fc1"), inp, hidden),
            l2: self.dense(&format!("{name}.fc2"), hidden, out),
        }
    }
}

pub(crate) const CONV_KERNEL: usize = 4;

impl ParamLayout {
    pub fn build(c: &ModelConfig) -> Self {
        let mut b = Builder {
            entries: Vec::new(),
            total: 0,
        };
        let (h, s, hid, e) = (
            c.deterministic_dim,
            c.stochastic_dim,
            c.hidden_dim,
            c.embed_dim,
        );
        let flat = 2 * c.conv_depth * (c.image_size / 4) * (c.image_size / 4);
        let mut encoder = |name: &str| ConvEncoder {
            conv1: b.conv(
                &format!("{name}.conv1"),
                CHANNELS,
                c.conv_depth,
                CONV_KERNEL,
            ),
            conv2: b.conv(
                &format!("{name}.conv2"),
                c.conv_depth,
                2 * c.conv_depth,
                CONV_KERNEL,
            ),
            fc: b.dense(&format!("{name}.fc"), flat, e),
        };
        let encoders = [encoder("encoder_front"), encoder("encoder_side")];
        let posterior = b.mlp("posterior", h + 2 * e, hid, 2 * s);
        let transition_in = b.dense("transition.input", s + c.action_dim, hid);
        let gru = GruIds {
            w_input: b.push("gru.w_input".into(), vec![3 * h, hid], hid, false),
            w_hidden: b.push("gru.w_hidden".into(), vec![3 * h, h], h, false),
            b_input: b.push("gru.b_input".into(), vec![3 * h], hid, true),
            b_hidden: b.push("gru.b_hidden".into(), vec![3 * h], h, true),
        };
        let prior = b.mlp("prior", h, hid, 2 * s);
        let reward = b.mlp("reward", h + s, hid, 1);
        let view = c.view_len();
        let decoders = [
            b.mlp("decoder_front", h + s, hid, view),
            b.mlp("decoder_side", h + s, hid, view),
        ];
        Self {
            entries: b.entries,
            total: b.total,
            ids: ParamIds {
                encoders,
                posterior,
                transition_in,
                gru,
                prior,
                reward,
                decoders,
            },
        }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Total scalar count.
    pub fn total(&self) -> usize {
        self.total
    }

    pub(crate) fn ids(&self) -> &ParamIds {
        &self.ids
    }
}
