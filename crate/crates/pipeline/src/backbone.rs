//! The eight pretrained architectures compared in the study and how to
//! instantiate each one with a replaced classification head.

use std::fmt;
use std::str::FromStr;

use candle_core::Result;
use serde::{Deserialize, Serialize};

use crate::nn::layers::Init;
use crate::nn::{densenet, inception, mobilenet, resnet, squeezenet, vgg, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneName {
    Mobilenetv2,
    Squeezenet,
    Resnet18,
    Resnet101,
    Densenet201,
    Chexnet,
    Inceptionv3,
    Vgg19,
}

/// Where a backbone's initial weights were learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainCorpus {
    ImageNet,
    ChestXray14,
}

impl fmt::Display for PretrainCorpus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PretrainCorpus::ImageNet => "ImageNet",
            PretrainCorpus::ChestXray14 => "ChestX-ray14",
        })
    }
}

/// Static description of one backbone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BackboneSpec {
    pub name: BackboneName,
    /// Side of the square network input in pixels.
    pub input_side: u32,
    pub pretrain_corpus: PretrainCorpus,
    /// Parameter prefix of the classification layer that is replaced.
    pub head_location: &'static str,
    /// Per-channel mean and standard deviation applied after scaling to [0, 1].
    pub mean: [f32; 3],
    pub std: [f32; 3],
    /// File name looked up inside the weights directory.
    pub weight_file: &'static str,
}

const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

impl BackboneName {
    pub const ALL: [BackboneName; 8] = [
        BackboneName::Mobilenetv2,
        BackboneName::Squeezenet,
        BackboneName::Resnet18,
        BackboneName::Resnet101,
        BackboneName::Densenet201,
        BackboneName::Chexnet,
        BackboneName::Inceptionv3,
        BackboneName::Vgg19,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneName::Mobilenetv2 => "mobilenetv2",
            BackboneName::Squeezenet => "squeezenet",
            BackboneName::Resnet18 => "resnet18",
            BackboneName::Resnet101 => "resnet101",
            BackboneName::Densenet201 => "densenet201",
            BackboneName::Chexnet => "chexnet",
            BackboneName::Inceptionv3 => "inceptionv3",
            BackboneName::Vgg19 => "vgg19",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            BackboneName::Mobilenetv2 => "MobileNetv2",
            BackboneName::Squeezenet => "SqueezeNet",
            BackboneName::Resnet18 => "ResNet18",
            BackboneName::Resnet101 => "ResNet101",
            BackboneName::Densenet201 => "DenseNet201",
            BackboneName::Chexnet => "CheXNet",
            BackboneName::Inceptionv3 => "Inceptionv3",
            BackboneName::Vgg19 => "VGG19",
        }
    }

    pub fn spec(self) -> BackboneSpec {
        let (input_side, head_location, weight_file) = match self {
            BackboneName::Mobilenetv2 => (224, "classifier.1", "mobilenetv2.safetensors"),
            BackboneName::Squeezenet => (227, "classifier.1", "squeezenet.safetensors"),
            BackboneName::Resnet18 => (224, "fc", "resnet18.safetensors"),
            BackboneName::Resnet101 => (224, "fc", "resnet101.safetensors"),
            BackboneName::Densenet201 => (224, "classifier", "densenet201.safetensors"),
            BackboneName::Chexnet => (224, "classifier", "chexnet.safetensors"),
            BackboneName::Inceptionv3 => (299, "fc", "inceptionv3.safetensors"),
            BackboneName::Vgg19 => (224, "classifier.6", "vgg19.safetensors"),
        };
        let (mean, std) = match self {
            // torchvision's Inception-v3 maps inputs to [-1, 1].
            BackboneName::Inceptionv3 => ([0.5; 3], [0.5; 3]),
            _ => (IMAGENET_MEAN, IMAGENET_STD),
        };
        BackboneSpec {
            name: self,
            input_side,
            pretrain_corpus: match self {
                BackboneName::Chexnet => PretrainCorpus::ChestXray14,
                _ => PretrainCorpus::ImageNet,
            },
            head_location,
            mean,
            std,
            weight_file,
        }
    }

    /// Builds the architecture with a freshly initialised `num_classes` head.
    pub fn build(self, init: &mut Init<'_>, num_classes: usize) -> Result<Box<dyn Network>> {
        Ok(match self {
            BackboneName::Mobilenetv2 => Box::new(mobilenet::MobileNetV2::new(init, num_classes)?),
            BackboneName::Squeezenet => Box::new(squeezenet::SqueezeNet::new(init, num_classes)?),
            BackboneName::Resnet18 => {
                Box::new(resnet::ResNet::new(init, resnet::Depth::D18, num_classes)?)
            }
            BackboneName::Resnet101 => {
                Box::new(resnet::ResNet::new(init, resnet::Depth::D101, num_classes)?)
            }
            BackboneName::Densenet201 => Box::new(densenet::DenseNet::new(
                init,
                densenet::Depth::D201,
                num_classes,
            )?),
            BackboneName::Chexnet => Box::new(densenet::DenseNet::new(
                init,
                densenet::Depth::D121,
                num_classes,
            )?),
            BackboneName::Inceptionv3 => Box::new(inception::InceptionV3::new(init, num_classes)?),
            BackboneName::Vgg19 => Box::new(vgg::Vgg19::new(init, num_classes)?),
        })
    }
}

impl fmt::Display for BackboneName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown backbone {0:?}; expected one of mobilenetv2, squeezenet, resnet18, resnet101, densenet201, chexnet, inceptionv3, vgg19")]
pub struct UnknownBackbone(pub String);

impl FromStr for BackboneName {
    type Err = UnknownBackbone;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        BackboneName::ALL
            .into_iter()
            .find(|b| b.as_str() == key)
            .ok_or_else(|| UnknownBackbone(s.to_string()))
    }
}
