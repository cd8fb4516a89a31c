use std::fmt;

use serde::Serialize;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident($inner:ty)) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// A radio device: end node, star coordinator or PAN coordinator.
    NodeId(u16)
);
id_type!(
    /// A star, identified by the device id of its coordinator.
    StarId(u16)
);
id_type!(AllocId(u32));
id_type!(FlowId(u32));

impl StarId {
    pub fn coordinator(self) -> NodeId {
        NodeId(self.0)
    }
}

impl NodeId {
    pub const BROADCAST: NodeId = NodeId(u16::MAX);

    pub fn as_star(self) -> StarId {
        StarId(self.0)
    }
}
