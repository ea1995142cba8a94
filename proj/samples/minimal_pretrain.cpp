// Tiny end-to-end run on an in-memory phantom dataset: a few pre-training
// steps followed by a short fine-tune on two labeled subjects.
#include <iostream>

#include "sal/evaluation.hpp"
#include "sal/sal.hpp"

using namespace sal;

int main() {
    Dataset ds = make_phantom_dataset_in_memory(4, 12, 32, 32, 7);

    ExperimentConfig cfg;
    cfg.seed = 1;
    cfg.model.base_width = 4;
    cfg.augment.output_size = {32, 32};
    cfg.loss.omega = 2;
    cfg.pairing.n = 4;
    cfg.pretrain.epochs = 2;
    cfg.pretrain.iterations_per_epoch = 5;
    cfg.finetune.epochs = 5;
    cfg.validate();

    PretrainRun pre = pretrain(ds, cfg);
    std::cout << "pretrain: first total " << pre.log.front().total << ", last total "
              << pre.log.back().total << "\n";

    const fs::path ckpt = fs::temp_directory_path() / "sal_minimal_pretrain.ckpt.json";
    save_pretrain_checkpoint(pre, cfg, ckpt);
    Checkpoint loaded = load_checkpoint(ckpt);

    std::vector<std::string> labeled = {ds.volumes[0].subject_id(), ds.volumes[1].subject_id()};
    FinetuneRun ft = finetune(ds, labeled, cfg, &loaded);
    std::cout << "finetune: final mean loss " << ft.log.back().mean_loss << "\n";

    double dsc = evaluate_fold(ft.model, ds, {ds.volumes[2].subject_id()});
    std::cout << "held-out subject mean DSC: " << dsc << "\n";
    return 0;
}
