#include "qtseg/model.hpp"

#include "qtseg/errors.hpp"

namespace qtseg {

QTSegModel QTSegModel::build(const ModelConfig& config) {
  config.validate();
  QTSegModel m;
  m.config = config;
  Rng rng(config.seed);
  m.encoder = Encoder::make(config, rng);
  if (config.use_mlff) {
    m.mlff = Mlff::make(config, rng);
  }
  m.decoder = Decoder::make(config, rng);
  return m;
}

PyramidFeatures QTSegModel::backbone(const Tensor& image) const {
  PyramidFeatures pyr = encoder.forward(image);
  return mlff ? mlff->forward(pyr) : pyr;
}

Tensor QTSegModel::forward(const Tensor& image, Decoder::Trace* trace) const {
  const bool batched = image.rank() == 4;
  if (!batched && image.rank() != 3) {
    throw ShapeError("model expects [C,H,W] or [B,C,H,W], got " +
                     shape_str(image.shape()));
  }
  Tensor x = batched ? image
                     : ops::reshape(image, {1, image.dim(0), image.dim(1),
                                            image.dim(2)});
  const int64_t h = x.dim(2);
  const int64_t w = x.dim(3);
  PyramidFeatures sf = backbone(x);
  Tensor logits = decoder.forward(sf, h, w, trace);
  if (!batched) {
    logits = ops::reshape(logits, {logits.dim(1), h, w});
  }
  return logits;
}

nn::NamedTensorList QTSegModel::named_parameters() const {
  nn::NamedTensorList out;
  encoder.params("encoder", out);
  if (mlff) mlff->params("mlff", out);
  decoder.params("decoder", out);
  return out;
}

nn::NamedTensorList QTSegModel::named_buffers() const {
  nn::NamedTensorList out;
  encoder.buffers("encoder", out);
  if (mlff) mlff->buffers("mlff", out);
  decoder.buffers("decoder", out);
  return out;
}

}  // namespace qtseg
