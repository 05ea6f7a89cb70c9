use candle_core::{Device, Tensor};
use cxr_pipeline::backbone::BackboneName;
use cxr_pipeline::nn::layers::Init;
use cxr_pipeline::nn::{Ctx, ParamStore};

/// Learnable parameter totals of the reference ImageNet models (1000-way
/// heads; Inception-v3 without its auxiliary classifier).
#[test]
fn parameter_counts_match_reference_architectures() {
    let expected = [
        (BackboneName::Resnet18, 11_689_512),
        (BackboneName::Resnet101, 44_549_160),
        (BackboneName::Chexnet, 7_978_856),
        (BackboneName::Densenet201, 20_013_928),
        (BackboneName::Squeezenet, 1_235_496),
        (BackboneName::Mobilenetv2, 3_504_872),
        (BackboneName::Inceptionv3, 23_834_568),
        (BackboneName::Vgg19, 143_667_240),
    ];
    for (name, count) in expected {
        let mut store = ParamStore::default();
        name.build(&mut Init::new(&mut store, 0), 1000).unwrap();
        assert_eq!(store.parameter_count(), count, "{name}");
        drop(store);
    }
}

#[test]
fn every_backbone_maps_its_input_side_to_class_scores() {
    for name in BackboneName::ALL {
        let side = name.spec().input_side as usize;
        let mut store = ParamStore::default();
        let net = name.build(&mut Init::new(&mut store, 7), 3).unwrap();
        let x = Tensor::zeros((3, 1, side, side), candle_core::DType::F32, &Device::Cpu).unwrap();
        let y = net.forward(&x, &mut Ctx::eval()).unwrap();
        assert_eq!(y.dims(), &[1, 3], "{name}");
    }
}
