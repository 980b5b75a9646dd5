//! Structural descriptors for schema-constrained LLM output.
//!
//! Small on purpose: field names, value kinds, requiredness. Enough to
//! validate a structured response and to emit a JSON Schema for providers
//! that support native structured output.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemaNode {
    String,
    Number,
    Integer,
    Boolean,
    /// String restricted to a set of values (compared case-insensitively).
    Enum { values: Vec<String> },
    Array { items: Box<SchemaNode> },
    Object(ObjectSchema),
    Nullable { inner: Box<SchemaNode> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSchema {
    pub fields: Vec<FieldSchema>,
    /// Whether keys beyond `fields` are accepted.
    #[serde(default)]
    pub additional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub name: String,
    pub node: SchemaNode,
    pub required: bool,
}

impl FieldSchema {
    pub fn required(name: &str, node: SchemaNode) -> Self {
        Self {
            name: name.to_string(),
            node,
            required: true,
        }
    }

    pub fn optional(name: &str, node: SchemaNode) -> Self {
        Self {
            name: name.to_string(),
            node: SchemaNode::Nullable {
                inner: Box::new(node),
            },
            required: false,
        }
    }
}

impl SchemaNode {
    pub fn array(items: SchemaNode) -> Self {
        SchemaNode::Array {
            items: Box::new(items),
        }
    }

    pub fn enumeration<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SchemaNode::Enum {
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    fn validate_at(&self, value: &Value, path: &str) -> Result<(), String> {
        let mismatch = |expected: &str| Err(format!("{path}: expected {expected}, got {value}"));
        match self {
            SchemaNode::String => match value {
                Value::String(_) => Ok(()),
                _ => mismatch("string"),
            },
            SchemaNode::Number => match value {
                Value::Number(_) => Ok(()),
                _ => mismatch("number"),
            },
            SchemaNode::Integer => match value {
                Value::Number(n) if n.is_i64() || n.is_u64() => Ok(()),
                _ => mismatch("integer"),
            },
            SchemaNode::Boolean => match value {
                Value::Bool(_) => Ok(()),
                _ => mismatch("boolean"),
            },
            SchemaNode::Enum { values } => match value {
                Value::String(s) if values.iter().any(|v| v.eq_ignore_ascii_case(s.trim())) => Ok(()),
                _ => mismatch(&format!("one of {values:?}")),
            },
            SchemaNode::Array { items } => match value {
                Value::Array(xs) => xs
                    .iter()
                    .enumerate()
                    .try_for_each(|(i, x)| items.validate_at(x, &format!("{path}[{i}]"))),
                _ => mismatch("array"),
            },
            SchemaNode::Object(obj) => obj.validate_at(value, path),
            SchemaNode::Nullable { inner } => match value {
                Value::Null => Ok(()),
                v => inner.validate_at(v, path),
            },
        }
    }

    fn to_json_schema(&self) -> Value {
        match self {
            SchemaNode::String => json!({"type": "string"}),
            SchemaNode::Number => json!({"type": "number"}),
            SchemaNode::Integer => json!({"type": "integer"}),
            SchemaNode::Boolean => json!({"type": "boolean"}),
            SchemaNode::Enum { values } => json!({"type": "string", "enum": values}),
            SchemaNode::Array { items } => json!({"type": "array", "items": items.to_json_schema()}),
            SchemaNode::Object(obj) => obj.to_json_schema(),
            SchemaNode::Nullable { inner } => json!({"anyOf": [inner.to_json_schema(), {"type": "null"}]}),
        }
    }
}

impl ObjectSchema {
    pub fn new(fields: Vec<FieldSchema>) -> Self {
        Self {
            fields,
            additional: false,
        }
    }

    fn validate_at(&self, value: &Value, path: &str) -> Result<(), String> {
        let Value::Object(map) = value else {
            return Err(format!("{path}: expected object, got {value}"));
        };
        for f in &self.fields {
            let child = format!("{path}.{}", f.name);
            match map.get(&f.name) {
                Some(v) => f.node.validate_at(v, &child)?,
                None if f.required => return Err(format!("{child}: missing required field")),
                None => {}
            }
        }
        if !self.additional {
            if let Some(k) = map.keys().find(|k| !self.fields.iter().any(|f| &f.name == *k)) {
                return Err(format!("{path}.{k}: unexpected field"));
            }
        }
        Ok(())
    }

    fn to_json_schema(&self) -> Value {
        let mut props = Map::new();
        for f in &self.fields {
            props.insert(f.name.clone(), f.node.to_json_schema());
        }
        let required: Vec<&str> = self
            .fields
            .iter()
            .filter(|f| f.required)
            .map(|f| f.name.as_str())
            .collect();
        json!({
            "type": "object",
            "properties": props,
            "required": required,
            "additionalProperties": self.additional,
        })
    }
}

/// Named top-level object schema attached to a chat request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSchema {
    pub name: String,
    pub root: ObjectSchema,
}

impl OutputSchema {
    pub fn new(name: impl Into<String>, root: ObjectSchema) -> Self {
        Self {
            name: name.into(),
            root,
        }
    }

    pub fn validate(&self, value: &Value) -> Result<(), String> {
        self.root.validate_at(value, "$")
    }

    pub fn to_json_schema(&self) -> Value {
        self.root.to_json_schema()
    }
}
