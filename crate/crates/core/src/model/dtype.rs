use std::fmt;
use std::str::FromStr;

/// Signal data type. Point clouds carry a capacity; the actual row count is
/// a runtime property bounded by it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DType {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
    PointCloud(usize),
    Bus(BusLayout),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BusLayout {
    pub elements: Vec<BusElement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BusElement {
    pub name: String,
    pub dtype: DType,
}

/// 1-based index path into a (possibly nested) bus layout.
pub type PositionPath = Vec<usize>;

impl DType {
    /// Element count used by cost formulas: vector length, matrix entries,
    /// point-cloud capacity in rows.
    pub fn element_count(&self) -> usize {
        match self {
            DType::Scalar => 1,
            DType::Vector(n) => *n,
            DType::Matrix(r, c) => r * c,
            DType::PointCloud(n) => *n,
            DType::Bus(layout) => layout.elements.iter().map(|e| e.dtype.element_count()).sum(),
        }
    }

    /// Transfer size in bytes: 8 per f64, point clouds 12 bytes per row plus
    /// an 8-byte header.
    pub fn byte_size(&self) -> u64 {
        match self {
            DType::Scalar => 8,
            DType::Vector(n) => 8 * *n as u64,
            DType::Matrix(r, c) => 8 * (*r as u64) * (*c as u64),
            DType::PointCloud(n) => 12 * *n as u64 + 8,
            DType::Bus(layout) => layout.elements.iter().map(|e| e.dtype.byte_size()).sum(),
        }
    }

    pub fn is_bus(&self) -> bool {
        matches!(self, DType::Bus(_))
    }

    pub(crate) fn check_dims(&self) -> Result<(), String> {
        match self {
            DType::Scalar => Ok(()),
            DType::Vector(n) | DType::PointCloud(n) if *n == 0 => {
                Err(format!("dimension must be positive in `{self}`"))
            }
            DType::Matrix(r, c) if *r == 0 || *c == 0 => {
                Err(format!("dimension must be positive in `{self}`"))
            }
            DType::Bus(layout) => {
                if layout.elements.is_empty() {
                    return Err("bus layout must have at least one element".into());
                }
                for (i, e) in layout.elements.iter().enumerate() {
                    if layout.elements[..i].iter().any(|o| o.name == e.name) {
                        return Err(format!("duplicate bus element `{}`", e.name));
                    }
                    e.dtype.check_dims()?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

impl BusLayout {
    pub fn new(elements: Vec<(String, DType)>) -> Self {
        BusLayout {
            elements: elements
                .into_iter()
                .map(|(name, dtype)| BusElement { name, dtype })
                .collect(),
        }
    }

    /// Converts a dotted element name (`p.y`) into its 1-based position path.
    pub fn position_of(&self, dotted: &str) -> Option<PositionPath> {
        let mut layout = self;
        let mut path = Vec::new();
        let mut segments = dotted.split('.').peekable();
        while let Some(seg) = segments.next() {
            let idx = layout.elements.iter().position(|e| e.name == seg)?;
            path.push(idx + 1);
            if segments.peek().is_some() {
                match &layout.elements[idx].dtype {
                    DType::Bus(inner) => layout = inner,
                    _ => return None,
                }
            }
        }
        Some(path)
    }

    /// Type of the element at `path`, if the path is valid.
    pub fn at(&self, path: &[usize]) -> Option<&DType> {
        let (first, rest) = path.split_first()?;
        let element = self.elements.get(first.checked_sub(1)?)?;
        if rest.is_empty() {
            Some(&element.dtype)
        } else {
            match &element.dtype {
                DType::Bus(inner) => inner.at(rest),
                _ => None,
            }
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::Scalar => write!(f, "Scalar"),
            DType::Vector(n) => write!(f, "Vector({n})"),
            DType::Matrix(r, c) => write!(f, "Matrix({r},{c})"),
            DType::PointCloud(n) => write!(f, "PointCloud({n})"),
            DType::Bus(layout) => {
                write!(f, "Bus{{")?;
                for (i, e) in layout.elements.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{}:{}", e.name, e.dtype)?;
                }
                write!(f, "}}")
            }
        }
    }
}

/// Formats a position path as `1.2.3`.
pub fn format_position(path: &[usize]) -> String {
    path.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(".")
}

pub fn parse_position(text: &str) -> Result<PositionPath, String> {
    text.split('.')
        .map(|s| match s.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("bad position path `{text}`")),
            Ok(v) => Ok(v),
        })
        .collect()
}

struct DTypeParser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> DTypeParser<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        while self.rest().starts_with(char::is_whitespace) {
            self.pos += self.rest().chars().next().map_or(0, char::len_utf8);
        }
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), String> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(format!("expected `{token}` at offset {} in `{}`", self.pos, self.src))
        }
    }

    fn ident(&mut self) -> Result<&'a str, String> {
        self.skip_ws();
        let rest = self.rest();
        let len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        if len == 0 {
            return Err(format!("expected identifier at offset {} in `{}`", self.pos, self.src));
        }
        self.pos += len;
        Ok(&rest[..len])
    }

    fn number(&mut self) -> Result<usize, String> {
        self.skip_ws();
        let rest = self.rest();
        let len = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
        let value = rest[..len]
            .parse()
            .map_err(|_| format!("expected number at offset {} in `{}`", self.pos, self.src))?;
        self.pos += len;
        Ok(value)
    }

    fn dtype(&mut self) -> Result<DType, String> {
        let head = self.ident()?;
        match head {
            "Scalar" => Ok(DType::Scalar),
            "Vector" => {
                self.expect("(")?;
                let n = self.number()?;
                self.expect(")")?;
                Ok(DType::Vector(n))
            }
            "Matrix" => {
                self.expect("(")?;
                let r = self.number()?;
                self.expect(",")?;
                let c = self.number()?;
                self.expect(")")?;
                Ok(DType::Matrix(r, c))
            }
            "PointCloud" => {
                self.expect("(")?;
                let n = self.number()?;
                self.expect(")")?;
                Ok(DType::PointCloud(n))
            }
            "Bus" => {
                self.expect("{")?;
                let mut elements = Vec::new();
                loop {
                    let name = self.ident()?.to_string();
                    self.expect(":")?;
                    let dtype = self.dtype()?;
                    elements.push(BusElement { name, dtype });
                    if !self.eat(",") {
                        break;
                    }
                }
                self.expect("}")?;
                Ok(DType::Bus(BusLayout { elements }))
            }
            other => Err(format!("unknown data type `{other}`")),
        }
    }
}

impl FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parser = DTypeParser { src: s, pos: 0 };
        let dtype = parser.dtype()?;
        parser.skip_ws();
        if parser.pos != s.len() {
            return Err(format!("trailing characters in data type `{s}`"));
        }
        dtype.check_dims()?;
        Ok(dtype)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dtype_text_round_trip() {
        for text in [
            "Scalar",
            "Vector(3)",
            "Matrix(2,4)",
            "PointCloud(1000)",
            "Bus{a:Scalar,p:Bus{x:Scalar,y:Vector(2)},q:PointCloud(5)}",
        ] {
            let dtype: DType = text.parse().unwrap();
            assert_eq!(dtype.to_string(), text);
        }
    }

    #[test]
    fn rejects_zero_dimensions_and_duplicate_elements() {
        assert!("Vector(0)".parse::<DType>().is_err());
        assert!("Matrix(0,2)".parse::<DType>().is_err());
        assert!("Bus{a:Scalar,a:Scalar}".parse::<DType>().is_err());
        assert!("Tensor(2)".parse::<DType>().is_err());
        assert!("Vector(2) x".parse::<DType>().is_err());
    }

    #[test]
    fn byte_sizes() {
        assert_eq!(DType::Scalar.byte_size(), 8);
        assert_eq!(DType::Vector(10).byte_size(), 80);
        assert_eq!(DType::Matrix(2, 3).byte_size(), 48);
        assert_eq!(DType::PointCloud(100).byte_size(), 1208);
    }

    #[test]
    fn nested_positions() {
        let layout = match "Bus{p:Bus{x:Scalar,y:Scalar},q:Scalar}".parse::<DType>().unwrap() {
            DType::Bus(l) => l,
            _ => unreachable!(),
        };
        assert_eq!(layout.position_of("p.y"), Some(vec![1, 2]));
        assert_eq!(layout.position_of("q"), Some(vec![2]));
        assert_eq!(layout.position_of("z"), None);
        assert_eq!(layout.position_of("q.x"), None);
        assert_eq!(layout.at(&[1, 2]), Some(&DType::Scalar));
        assert_eq!(layout.at(&[3]), None);
        assert_eq!(layout.at(&[0]), None);
    }
}
