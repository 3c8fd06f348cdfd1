"""rlvm - CLI runner.

소스 체크아웃에서 바로 실행하기 위한 진입점입니다 (설치 후에는 ``rlvm`` 명령 사용).

사용 방법:
    python run_rlvm.py gen-request --synth spike --vms 50 --seed 0
    python run_rlvm.py run --request out/spike-50x288-s0.txt --method lr-mmt-pabfd
    python run_rlvm.py train --request out/spike-50x288-s0.txt --iterations 100
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent / "src"))

from rlvm.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
