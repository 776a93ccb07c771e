use core::fmt;

/// Identifier of a perception node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node{}", self.0)
    }
}

/// Which encoder/fusion stream a node's data belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stream {
    Vehicle,
    Infrastructure,
}

impl Stream {
    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Vehicle => "vehicle",
            Stream::Infrastructure => "infrastructure",
        }
    }

    pub fn other(self) -> Stream {
        match self {
            Stream::Vehicle => Stream::Infrastructure,
            Stream::Infrastructure => Stream::Vehicle,
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
