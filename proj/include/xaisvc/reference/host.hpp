#pragma once

#include <memory>

#include "xaisvc/reference/dataset.hpp"
#include "xaisvc/reference/evaluation.hpp"
#include "xaisvc/reference/models.hpp"
#include "xaisvc/reference/xai.hpp"
#include "xaisvc/transport.hpp"

namespace xaisvc::reference {

/// The four reference services mounted on one local host:
///   local://dataset, local://model/<kind>, local://xai/occlusion,
///   local://evaluation
struct ReferenceServices {
  std::shared_ptr<LocalServiceHost> host = std::make_shared<LocalServiceHost>();
  std::shared_ptr<DatasetStore> datasets = std::make_shared<DatasetStore>();
  std::shared_ptr<const Transport> transport = std::make_shared<Transport>(host);

  ReferenceServices() {
    host->mount("dataset", dataset_service(datasets));
    host->mount("model", model_service());
    host->mount("xai", xai_service(transport));
    host->mount("evaluation", evaluation_service());
  }
};

}  // namespace xaisvc::reference
